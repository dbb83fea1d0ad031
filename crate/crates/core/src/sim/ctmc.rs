use crate::distributions::{RandomStream, ServiceDistribution};
use crate::error::{Error, Result};
use crate::policies::{level_of, LevelChoice, Policy};

use super::metrics::{Levels, Recorder};
use super::{balanced_start, SimConfig, SystemState, TraceMetrics, STREAM_DISPATCH, STREAM_EVENTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtmcEvent {
    Arrival,
    Departure,
}

/// Markov chain on level counts for exponential jobs.
///
/// Each event draws an exponential clock at total rate
/// `lambda + mu * busy`, then picks arrival vs departure by rate. A
/// departure leaves a uniformly chosen busy server.
#[derive(Debug)]
pub struct CtmcSimulator {
    k: usize,
    lambda: f64,
    mu: f64,
    policy: Policy,
    levels: Levels,
    total_jobs: usize,
    central: usize,
    time: f64,
    events: RandomStream,
    dispatch: RandomStream,
    steps: u64,
}

/// Invariants are re-checked every this many events in debug builds.
const INVARIANT_SAMPLE: u64 = 1024;

impl CtmcSimulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let ServiceDistribution::Exponential(mu) = cfg.service else {
            return Err(Error::EngineMismatch(format!(
                "the Markov-chain engine needs exponential jobs, got {}",
                cfg.service
            )));
        };
        if cfg.policy.needs_work() {
            return Err(Error::Capability {
                policy: cfg.policy.to_string(),
                needs: "per-server residual work",
            });
        }
        let central = matches!(cfg.policy, Policy::CentralQueue);
        let jobs = cfg.initial_jobs();
        let (levels, buffer) = balanced_start(cfg.k, jobs, central);
        Ok(CtmcSimulator {
            k: cfg.k,
            lambda: cfg.lambda,
            mu,
            policy: cfg.policy,
            levels: Levels::new(levels, false),
            total_jobs: jobs,
            central: buffer,
            time: 0.0,
            events: RandomStream::new(cfg.seed, cfg.stream_id(STREAM_EVENTS)),
            dispatch: RandomStream::new(cfg.seed, cfg.stream_id(STREAM_DISPATCH)),
            steps: 0,
        })
    }

    /// Starts from an explicit state instead of the balanced default.
    pub fn with_state(mut self, state: SystemState) -> Result<Self> {
        state.check_invariants(self.k)?;
        self.levels = Levels::new(state.level_counts, false);
        self.total_jobs = state.total_jobs;
        self.central = state.central_buffer;
        Ok(self)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn total_jobs(&self) -> usize {
        self.total_jobs
    }

    pub fn state(&self) -> SystemState {
        let mut level_counts = self.levels.counts.clone();
        while level_counts.len() > 1 && *level_counts.last().unwrap() == 0 {
            level_counts.pop();
        }
        SystemState {
            level_counts,
            total_jobs: self.total_jobs,
            central_buffer: self.central,
        }
    }

    /// Time until the next event; the state is unchanged until `apply`.
    #[inline]
    fn draw(&mut self) -> (f64, CtmcEvent) {
        let busy = self.k - self.levels.count(0);
        let total = self.lambda + self.mu * busy as f64;
        let dt = self.events.exp1() / total;
        let kind = if self.events.open_unit() * total <= self.lambda {
            CtmcEvent::Arrival
        } else {
            CtmcEvent::Departure
        };
        (dt, kind)
    }

    #[inline]
    fn apply(&mut self, kind: CtmcEvent) -> Result<()> {
        let now = self.time;
        match kind {
            CtmcEvent::Arrival => {
                self.total_jobs += 1;
                match self
                    .policy
                    .dispatch_level(&self.levels.counts, self.k, &mut self.dispatch)?
                {
                    LevelChoice::Level(l) => self.levels.shift(l, l + 1, now),
                    LevelChoice::Central => {
                        if self.levels.count(0) > 0 {
                            self.levels.shift(0, 1, now);
                        } else {
                            self.central += 1;
                        }
                    }
                }
            }
            CtmcEvent::Departure => {
                self.total_jobs -= 1;
                let busy = self.k - self.levels.count(0);
                if self.central > 0 {
                    // the freed server takes the head of the central buffer
                    self.central -= 1;
                } else {
                    let l = 1 + level_of(&self.levels.counts[1..], self.events.index(busy));
                    self.levels.shift(l, l - 1, now);
                }
            }
        }
        self.steps += 1;
        if cfg!(debug_assertions) && self.steps.is_multiple_of(INVARIANT_SAMPLE) {
            self.state().check_invariants(self.k)?;
        }
        Ok(())
    }

    /// Advances one event.
    pub fn step(&mut self) -> Result<CtmcEvent> {
        let (dt, kind) = self.draw();
        self.time += dt;
        self.apply(kind)?;
        Ok(kind)
    }

    fn run(mut self, cfg: &SimConfig) -> Result<TraceMetrics> {
        let mut rec = Recorder::new(self.k, cfg.trace_interval);
        let warmup = cfg.warmup_arrivals();
        let mut arrivals = 0u64;
        if warmup == 0 {
            rec.begin(0.0, &mut self.levels, self.total_jobs);
        }
        loop {
            let (dt, kind) = self.draw();
            rec.hold(dt, self.total_jobs, &self.levels);
            self.time += dt;
            if kind == CtmcEvent::Arrival {
                arrivals += 1;
                if arrivals == cfg.horizon_arrivals {
                    break;
                }
            }
            self.apply(kind)?;
            if !rec.is_recording() && arrivals == warmup {
                rec.begin(self.time, &mut self.levels, self.total_jobs);
            } else {
                rec.observe(self.time, &self.levels, self.total_jobs);
            }
        }
        let transient = !cfg.is_stable();
        Ok(rec.finish(
            self.time,
            &mut self.levels,
            arrivals - warmup,
            cfg.warmup_fraction,
            transient,
        ))
    }
}

/// Simulates the level-count Markov chain for `cfg.horizon_arrivals`
/// arrivals, discarding the first `warmup_fraction` of them.
pub fn run_ctmc(cfg: &SimConfig) -> Result<TraceMetrics> {
    CtmcSimulator::new(cfg)?.run(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ServiceDistribution;

    #[test]
    fn rejects_general_jobs_and_lwl() {
        let cfg =
            SimConfig::new(4, 2.0, Policy::Jsq).service(ServiceDistribution::Deterministic(1.0));
        assert!(matches!(run_ctmc(&cfg), Err(Error::EngineMismatch(_))));
        let cfg = SimConfig::new(4, 2.0, Policy::LeastWorkLeft);
        assert!(matches!(run_ctmc(&cfg), Err(Error::Capability { .. })));
    }

    #[test]
    fn invariants_hold_along_a_path() {
        for policy in [
            Policy::Jsq,
            Policy::CentralQueue,
            Policy::Random,
            Policy::PowerOfD(2),
            Policy::Iqf,
            Policy::I1f,
            Policy::IdleDepth(3),
        ] {
            let cfg = SimConfig::new(7, 6.3, policy).seed(11);
            let mut sim = CtmcSimulator::new(&cfg).unwrap();
            for _ in 0..20_000 {
                sim.step().unwrap();
                sim.state().check_invariants(7).unwrap();
            }
        }
    }

    #[test]
    fn identical_config_is_bit_identical() {
        let cfg = SimConfig::nds(16, 0.5, 1.0, Policy::Jsq)
            .unwrap()
            .arrivals(50_000)
            .seed(3);
        assert_eq!(run_ctmc(&cfg).unwrap(), run_ctmc(&cfg).unwrap());
        let other = run_ctmc(&cfg.clone().replication(1)).unwrap();
        assert_ne!(run_ctmc(&cfg).unwrap().time_avg_n(), other.time_avg_n());
    }

    #[test]
    fn histograms_are_normalized() {
        let cfg = SimConfig::nds(16, 0.5, 1.0, Policy::Jsq)
            .unwrap()
            .arrivals(100_000);
        let m = run_ctmc(&cfg).unwrap();
        let occ: f64 = m.occupancy_histogram().iter().sum();
        assert!((occ - 1.0).abs() < 1e-9, "{occ}");
        let dist: f64 = m.distribution_of_n().iter().sum();
        assert!((dist - 1.0).abs() < 1e-9);
        // E[N]/k = sum over n >= 1 of P(N >= n) / k
        let k = m.k as f64;
        let grid: Vec<f64> = (1..m.time_at_n.len()).map(|n| n as f64 / k).collect();
        let integral: f64 = m.ccdf_grid(&grid).iter().sum::<f64>() / k;
        assert!((integral - m.time_avg_n_per_server()).abs() < 1e-9);
        // mean occupancy level equals E[N]/k when there is no central buffer
        let level_mean: f64 = m
            .occupancy_histogram()
            .iter()
            .enumerate()
            .map(|(l, p)| l as f64 * p)
            .sum();
        assert!((level_mean - m.time_avg_n_per_server()).abs() < 1e-9);
    }

    #[test]
    fn cq_never_idles_with_buffered_jobs() {
        let cfg = SimConfig::new(3, 2.9, Policy::CentralQueue).seed(2);
        let mut sim = CtmcSimulator::new(&cfg).unwrap();
        for _ in 0..50_000 {
            sim.step().unwrap();
            let s = sim.state();
            assert!(s.central_buffer == 0 || s.idle() == 0);
            assert!(s.level_counts.len() <= 2);
        }
    }
}
