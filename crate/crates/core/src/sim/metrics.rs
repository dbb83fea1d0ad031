use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Level counts with lazily integrated time-weighted areas, and optional
/// membership lists so a uniform server within a level is O(1) to find.
#[derive(Clone, Debug)]
pub(crate) struct Levels {
    pub counts: Vec<usize>,
    area: Vec<f64>,
    stamp: Vec<f64>,
    members: Option<Members>,
    bottom: usize,
    top: usize,
}

#[derive(Clone, Debug)]
struct Members {
    by_level: Vec<Vec<usize>>,
    level_of: Vec<usize>,
    slot: Vec<usize>,
}

impl Levels {
    pub fn new(counts: Vec<usize>, track_members: bool) -> Self {
        let members = track_members.then(|| {
            let mut by_level = vec![Vec::new(); counts.len()];
            let mut level_of = Vec::new();
            let mut slot = Vec::new();
            let mut server = 0;
            for (l, &m) in counts.iter().enumerate() {
                for _ in 0..m {
                    slot.push(by_level[l].len());
                    by_level[l].push(server);
                    level_of.push(l);
                    server += 1;
                }
            }
            Members {
                by_level,
                level_of,
                slot,
            }
        });
        let n = counts.len();
        let bottom = counts.iter().position(|&m| m > 0).unwrap_or(0);
        let top = counts.iter().rposition(|&m| m > 0).unwrap_or(0);
        Levels {
            counts,
            area: vec![0.0; n],
            stamp: vec![0.0; n],
            members,
            bottom,
            top,
        }
    }

    fn ensure(&mut self, level: usize, now: f64) {
        while self.counts.len() <= level {
            self.counts.push(0);
            self.area.push(0.0);
            self.stamp.push(now);
            if let Some(m) = self.members.as_mut() {
                m.by_level.push(Vec::new());
            }
        }
    }

    #[inline]
    fn touch(&mut self, level: usize, now: f64) {
        self.area[level] += self.counts[level] as f64 * (now - self.stamp[level]);
        self.stamp[level] = now;
    }

    /// Moves one server from level `from` to level `to` at time `now`.
    #[inline]
    pub fn shift(&mut self, from: usize, to: usize, now: f64) {
        self.ensure(to, now);
        self.touch(from, now);
        self.touch(to, now);
        self.counts[from] -= 1;
        self.counts[to] += 1;
        self.top = self.top.max(to);
        self.bottom = self.bottom.min(to);
        if self.counts[from] == 0 {
            while self.counts[self.top] == 0 {
                self.top -= 1;
            }
            while self.counts[self.bottom] == 0 {
                self.bottom += 1;
            }
        }
    }

    /// Moves a named server (membership tracking required).
    pub fn shift_server(&mut self, server: usize, to: usize, now: f64) {
        let from = self.members.as_ref().expect("membership tracking").level_of[server];
        self.shift(from, to, now);
        let m = self.members.as_mut().unwrap();
        let s = m.slot[server];
        m.by_level[from].swap_remove(s);
        if let Some(&moved) = m.by_level[from].get(s) {
            m.slot[moved] = s;
        }
        m.slot[server] = m.by_level[to].len();
        m.by_level[to].push(server);
        m.level_of[server] = to;
    }

    pub fn server_in_level(&self, level: usize, rank: usize) -> usize {
        self.members.as_ref().expect("membership tracking").by_level[level][rank]
    }

    pub fn count(&self, level: usize) -> usize {
        self.counts.get(level).copied().unwrap_or(0)
    }

    /// Restart area integration at `now`.
    pub fn reset_areas(&mut self, now: f64) {
        self.area.iter_mut().for_each(|a| *a = 0.0);
        self.stamp.iter_mut().for_each(|s| *s = now);
    }

    pub fn areas(&mut self, now: f64) -> Vec<f64> {
        for l in 0..self.counts.len() {
            self.touch(l, now);
        }
        self.area.clone()
    }

    #[inline]
    pub fn min_level(&self) -> usize {
        self.bottom
    }

    #[inline]
    pub fn max_level(&self) -> usize {
        self.top
    }

    pub fn at_least(&self, level: usize) -> usize {
        self.counts.iter().skip(level).sum()
    }
}

/// One decimated trace point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceSample {
    pub time: f64,
    pub n: usize,
    pub idle: usize,
    pub m1: usize,
    pub m_ge3: usize,
}

/// Time-weighted summary of one run (or a merge of several).
///
/// Raw integrals are kept so runs merge exactly by time weighting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceMetrics {
    pub k: usize,
    /// Recorded time after warmup.
    pub duration: f64,
    /// `time_at_n[n]`: time spent with exactly `n` jobs in the system.
    pub time_at_n: Vec<f64>,
    /// `idle_area_at_n[n]`: integral of the idle count while N = n.
    pub idle_area_at_n: Vec<f64>,
    /// `level_area[l]`: integral of M_l.
    pub level_area: Vec<f64>,
    /// Sup of |(2 - N/k)_+ - M_1/k| over post-warmup epochs.
    pub ssc_sup: f64,
    /// Time during which max queue minus min queue exceeded 2.
    pub spread_over_two_time: f64,
    pub event_count: u64,
    pub arrivals: u64,
    pub warmup_fraction: f64,
    /// Set when the configuration has no steady state.
    pub transient: bool,
    pub samples: Vec<TraceSample>,
}

impl TraceMetrics {
    pub fn time_avg_n(&self) -> f64 {
        self.time_at_n
            .iter()
            .enumerate()
            .map(|(n, t)| n as f64 * t)
            .sum::<f64>()
            / self.duration
    }

    pub fn time_avg_n_per_server(&self) -> f64 {
        self.time_avg_n() / self.k as f64
    }

    pub fn time_avg_i(&self) -> f64 {
        self.idle_area_at_n.iter().sum::<f64>() / self.duration
    }

    /// Fraction of server-time spent at each level; sums to one.
    pub fn occupancy_histogram(&self) -> Vec<f64> {
        let total = self.duration * self.k as f64;
        self.level_area.iter().map(|a| a / total).collect()
    }

    /// Fraction of time with exactly `n` jobs.
    pub fn distribution_of_n(&self) -> Vec<f64> {
        self.time_at_n.iter().map(|t| t / self.duration).collect()
    }

    /// `P(N/k >= x)` under the time-stationary empirical law.
    pub fn ccdf_of_n_over_k(&self, x: f64) -> f64 {
        let start = (x * self.k as f64 - 1e-9).ceil().max(0.0) as usize;
        self.time_at_n.iter().skip(start).sum::<f64>() / self.duration
    }

    pub fn ccdf_grid(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&x| self.ccdf_of_n_over_k(x)).collect()
    }

    /// Time-weighted mean idle count given N/k in `[edges[i], edges[i+1])`.
    /// Bins never visited are `None`.
    pub fn idle_conditional_mean(&self, bin_edges: &[f64]) -> Vec<Option<f64>> {
        let k = self.k as f64;
        bin_edges
            .windows(2)
            .map(|w| {
                let (mut time, mut idle) = (0.0, 0.0);
                for (n, (&t, &a)) in self.time_at_n.iter().zip(&self.idle_area_at_n).enumerate() {
                    let x = n as f64 / k;
                    if x >= w[0] && x < w[1] {
                        time += t;
                        idle += a;
                    }
                }
                (time > 0.0).then(|| idle / time)
            })
            .collect()
    }

    pub fn spread_over_two_fraction(&self) -> f64 {
        self.spread_over_two_time / self.duration
    }

    /// Pools runs of the same system by time weighting.
    pub fn merge(runs: &[TraceMetrics]) -> TraceMetrics {
        let mut out = TraceMetrics::default();
        if let Some(first) = runs.first() {
            out.k = first.k;
            out.warmup_fraction = first.warmup_fraction;
        }
        let add = |dst: &mut Vec<f64>, src: &[f64]| {
            if dst.len() < src.len() {
                dst.resize(src.len(), 0.0);
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        };
        for r in runs {
            out.duration += r.duration;
            add(&mut out.time_at_n, &r.time_at_n);
            add(&mut out.idle_area_at_n, &r.idle_area_at_n);
            add(&mut out.level_area, &r.level_area);
            out.ssc_sup = out.ssc_sup.max(r.ssc_sup);
            out.spread_over_two_time += r.spread_over_two_time;
            out.event_count += r.event_count;
            out.arrivals += r.arrivals;
            out.transient |= r.transient;
        }
        out
    }
}

/// Accumulates post-warmup statistics; both engines drive it.
#[derive(Debug)]
pub(crate) struct Recorder {
    k: usize,
    recording: bool,
    start: f64,
    time_at_n: Vec<f64>,
    idle_area_at_n: Vec<f64>,
    ssc_sup: f64,
    spread_time: f64,
    events: u64,
    trace_interval: Option<f64>,
    next_sample: f64,
    samples: Vec<TraceSample>,
}

impl Recorder {
    pub fn new(k: usize, trace_interval: Option<f64>) -> Self {
        Recorder {
            k,
            recording: false,
            start: 0.0,
            time_at_n: Vec::new(),
            idle_area_at_n: Vec::new(),
            ssc_sup: 0.0,
            spread_time: 0.0,
            events: 0,
            trace_interval,
            next_sample: 0.0,
            samples: Vec::new(),
        }
    }

    pub fn begin(&mut self, now: f64, levels: &mut Levels, n: usize) {
        self.recording = true;
        self.start = now;
        self.next_sample = now;
        levels.reset_areas(now);
        self.observe(now, levels, n);
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Integrates the current (pre-event) state over `dt`.
    #[inline]
    pub fn hold(&mut self, dt: f64, n: usize, levels: &Levels) {
        if !self.recording {
            return;
        }
        if self.time_at_n.len() <= n {
            self.time_at_n.resize(n + 1, 0.0);
            self.idle_area_at_n.resize(n + 1, 0.0);
        }
        self.time_at_n[n] += dt;
        self.idle_area_at_n[n] += levels.count(0) as f64 * dt;
        if levels.max_level() > levels.min_level() + 2 {
            self.spread_time += dt;
        }
    }

    /// Post-event state.
    #[inline]
    pub fn observe(&mut self, now: f64, levels: &Levels, n: usize) {
        if !self.recording {
            return;
        }
        self.events += 1;
        let dev = super::ssc_deviation(n, levels.count(1), self.k);
        if dev > self.ssc_sup {
            self.ssc_sup = dev;
        }
        if let Some(dt) = self.trace_interval {
            if now >= self.next_sample {
                self.samples.push(TraceSample {
                    time: now,
                    n,
                    idle: levels.count(0),
                    m1: levels.count(1),
                    m_ge3: levels.at_least(3),
                });
                while self.next_sample <= now {
                    self.next_sample += dt;
                }
            }
        }
    }

    pub fn finish(
        self,
        now: f64,
        levels: &mut Levels,
        arrivals: u64,
        warmup_fraction: f64,
        transient: bool,
    ) -> TraceMetrics {
        TraceMetrics {
            k: self.k,
            duration: now - self.start,
            time_at_n: self.time_at_n,
            idle_area_at_n: self.idle_area_at_n,
            level_area: levels.areas(now),
            ssc_sup: self.ssc_sup,
            spread_over_two_time: self.spread_time,
            event_count: self.events,
            arrivals,
            warmup_fraction,
            transient,
            samples: self.samples,
        }
    }
}

/// Writes trace samples as CSV with header `time,N,I,M_1,M_ge3`.
pub fn write_trace_csv<W: Write>(out: W, samples: &[TraceSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "N", "I", "M_1", "M_ge3"])?;
    for s in samples {
        w.write_record([
            s.time.to_string(),
            s.n.to_string(),
            s.idle.to_string(),
            s.m1.to_string(),
            s.m_ge3.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
