//! k-server simulation engines.
//!
//! [`run_ctmc`] simulates exponential jobs as a Markov chain on level counts
//! and is the fast path for every level-count policy. [`run_event_driven`]
//! tracks per-job work and supports general job sizes, FIFO or processor
//! sharing, and LWL. Both feed the same time-weighted recorder, so their
//! [`TraceMetrics`] are directly comparable.

mod ctmc;
mod event;
mod metrics;

use std::fmt;
use std::str::FromStr;

pub use ctmc::{run_ctmc, CtmcEvent, CtmcSimulator};
pub use event::{run_event_driven, EventSimulator};
pub use metrics::{write_trace_csv, TraceMetrics, TraceSample};

use crate::distributions::ServiceDistribution;
use crate::error::{param, Error, Result};
use crate::policies::Policy;

/// Stream ids within one replication.
pub(crate) const STREAM_EVENTS: u64 = 0;
pub(crate) const STREAM_DISPATCH: u64 = 1;
pub(crate) const STREAM_SERVICE: u64 = 2;
pub(crate) const STREAMS_PER_REPLICATION: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Discipline {
    Fifo,
    ProcessorSharing,
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Discipline::Fifo => "fifo",
            Discipline::ProcessorSharing => "ps",
        })
    }
}

impl FromStr for Discipline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fifo" | "fcfs" => Ok(Discipline::Fifo),
            "ps" => Ok(Discipline::ProcessorSharing),
            other => Err(param(format!("unknown discipline {other:?}"))),
        }
    }
}

/// One simulation run. Servers work at unit rate; the job size law fixes
/// the service rate `mu = 1 / E[size]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub k: usize,
    pub lambda: f64,
    pub service: ServiceDistribution,
    pub discipline: Discipline,
    pub policy: Policy,
    pub horizon_arrivals: u64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Replication index; selects a disjoint block of random substreams.
    pub replication: u64,
    /// Record a (time, N, I, M_1, M_{>=3}) sample at this spacing.
    pub trace_interval: Option<f64>,
}

impl SimConfig {
    pub const DEFAULT_WARMUP: f64 = 0.2;

    pub fn new(k: usize, lambda: f64, policy: Policy) -> Self {
        SimConfig {
            k,
            lambda,
            service: ServiceDistribution::Exponential(1.0),
            discipline: Discipline::Fifo,
            policy,
            horizon_arrivals: 1_000_000,
            warmup_fraction: Self::DEFAULT_WARMUP,
            seed: 1,
            replication: 0,
            trace_interval: None,
        }
    }

    /// Non-degenerate slowdown scaling: `lambda = (k - alpha) * mu`.
    pub fn nds(k: usize, alpha: f64, mu: f64, policy: Policy) -> Result<Self> {
        if !(alpha > 0.0 && alpha < k as f64) {
            return Err(param(format!("alpha must lie in (0, k), got {alpha}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(param(format!("mu must be positive, got {mu}")));
        }
        let mut cfg = SimConfig::new(k, (k as f64 - alpha) * mu, policy);
        cfg.service = ServiceDistribution::Exponential(mu);
        Ok(cfg)
    }

    /// Per-server load `rho`: `lambda = rho * k * mu` with mu = 1.
    pub fn with_load(k: usize, rho: f64, policy: Policy) -> Self {
        SimConfig::new(k, rho * k as f64, policy)
    }

    pub fn arrivals(mut self, n: u64) -> Self {
        self.horizon_arrivals = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn replication(mut self, r: u64) -> Self {
        self.replication = r;
        self
    }

    pub fn service(mut self, d: ServiceDistribution) -> Self {
        self.service = d;
        self
    }

    pub fn discipline(mut self, d: Discipline) -> Self {
        self.discipline = d;
        self
    }

    pub fn warmup(mut self, fraction: f64) -> Self {
        self.warmup_fraction = fraction;
        self
    }

    pub fn trace_every(mut self, interval: f64) -> Self {
        self.trace_interval = Some(interval);
        self
    }

    /// Service rate of one server (reciprocal mean job size).
    pub fn mu(&self) -> f64 {
        self.service
            .moments()
            .map(|(m, _)| 1.0 / m)
            .unwrap_or(f64::NAN)
    }

    pub fn rho(&self) -> f64 {
        self.lambda / (self.k as f64 * self.mu())
    }

    pub fn is_stable(&self) -> bool {
        self.rho() < 1.0
    }

    pub(crate) fn stream_id(&self, which: u64) -> u64 {
        self.replication * STREAMS_PER_REPLICATION + which
    }

    pub(crate) fn warmup_arrivals(&self) -> u64 {
        (self.warmup_fraction * self.horizon_arrivals as f64).floor() as u64
    }

    /// Jobs in the initial balanced state: `ceil(rho * k)`.
    pub(crate) fn initial_jobs(&self) -> usize {
        (self.lambda / self.mu()).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(param("k must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(param(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(param(format!(
                "warmup_fraction must lie in [0,1), got {}",
                self.warmup_fraction
            )));
        }
        if let Some(dt) = self.trace_interval {
            if !(dt > 0.0) {
                return Err(param("trace interval must be positive"));
            }
        }
        self.service.validate()?;
        self.policy.validate(self.k)?;
        if self.horizon_arrivals == 0 || self.warmup_arrivals() >= self.horizon_arrivals {
            return Err(Error::EmptyHorizon);
        }
        Ok(())
    }
}

/// Runs `cfg` on the Markov-chain engine when jobs are exponential, the
/// discipline is FIFO and the policy reads only queue lengths; otherwise on
/// the event-driven engine.
pub fn run_simulation(cfg: &SimConfig) -> Result<TraceMetrics> {
    if uses_ctmc(cfg) {
        run_ctmc(cfg)
    } else {
        run_event_driven(cfg)
    }
}

pub fn uses_ctmc(cfg: &SimConfig) -> bool {
    cfg.service.is_exponential() && cfg.discipline == Discipline::Fifo && !cfg.policy.needs_work()
}

/// Instantaneous state of the k servers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemState {
    /// `level_counts[l]` servers hold exactly `l` jobs.
    pub level_counts: Vec<usize>,
    pub total_jobs: usize,
    pub central_buffer: usize,
}

impl SystemState {
    pub fn k(&self) -> usize {
        self.level_counts.iter().sum()
    }

    pub fn idle(&self) -> usize {
        self.level_counts.first().copied().unwrap_or(0)
    }

    pub fn count_at(&self, level: usize) -> usize {
        self.level_counts.get(level).copied().unwrap_or(0)
    }

    /// Servers holding at least `level` jobs.
    pub fn count_at_least(&self, level: usize) -> usize {
        self.level_counts.iter().skip(level).sum()
    }

    /// Jobs beyond the first `level - 1` at each server, `N_{>=level}`.
    pub fn jobs_at_least(&self, level: usize) -> usize {
        self.level_counts
            .iter()
            .enumerate()
            .skip(level)
            .map(|(l, &m)| (l + 1 - level) * m)
            .sum()
    }

    pub fn check_invariants(&self, k: usize) -> Result<()> {
        let servers: usize = self.level_counts.iter().sum();
        let in_service: usize = self
            .level_counts
            .iter()
            .enumerate()
            .map(|(l, &m)| l * m)
            .sum();
        if servers != k {
            return Err(Error::InternalConsistency(format!(
                "level counts sum to {servers}, expected {k}"
            )));
        }
        if in_service + self.central_buffer != self.total_jobs {
            return Err(Error::InternalConsistency(format!(
                "N = {} but levels hold {in_service} and buffer {}",
                self.total_jobs, self.central_buffer
            )));
        }
        if self.central_buffer > 0 && self.idle() > 0 {
            return Err(Error::InternalConsistency(
                "server idles while the central buffer is non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// Deviation from state-space collapse at one epoch:
/// `|(2 - N/k)_+ - M_1/k|`.
pub fn ssc_deviation(total_jobs: usize, servers_at_one: usize, k: usize) -> f64 {
    let n_hat = total_jobs as f64 / k as f64;
    let m1_hat = servers_at_one as f64 / k as f64;
    ((2.0 - n_hat).max(0.0) - m1_hat).abs()
}

/// Supremum of [`ssc_deviation`] over recorded trace samples.
pub fn ssc_deviation_trace(samples: &[TraceSample], k: usize) -> f64 {
    samples
        .iter()
        .map(|s| ssc_deviation(s.n, s.m1, k))
        .fold(0.0, f64::max)
}

/// Balanced placement of `jobs` over `k` servers; excess beyond one job per
/// server goes to the central buffer when `central` is set.
pub(crate) fn balanced_start(k: usize, jobs: usize, central: bool) -> (Vec<usize>, usize) {
    if central {
        let busy = jobs.min(k);
        (vec![k - busy, busy], jobs - busy)
    } else {
        let base = jobs / k;
        let extra = jobs % k;
        let mut levels = vec![0; base + 2];
        levels[base] = k - extra;
        levels[base + 1] = extra;
        while levels.len() > 1 && *levels.last().unwrap() == 0 {
            levels.pop();
        }
        (levels, 0)
    }
}
