//! Replicated simulation grids and their CSV output.
//!
//! A grid point is one `(k, load, policy, discipline, dist)` tuple. Each is
//! simulated for a number of replications on independent random streams,
//! and the per-replication time averages are reduced by [`batch_means`].
//! Grid points and replications run on a rayon pool whose size can be set
//! with the `NDSLB_WORKERS` environment variable.

mod config;
mod recipes;
mod stats;

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::distributions::ServiceDistribution;
use crate::error::{param, Error, Result};
use crate::policies::Policy;
use crate::sim::{run_simulation, Discipline, SimConfig};

pub use config::{parse_config, ExperimentConfig};
pub use recipes::{reproduce, Figure, ReproduceOptions, Reproduction};
pub use stats::{batch_means, SummaryStats};

pub const WORKERS_ENV: &str = "NDSLB_WORKERS";

pub const CSV_HEADER: [&str; 12] = [
    "figure",
    "k",
    "alpha",
    "rho",
    "policy",
    "discipline",
    "dist",
    "seed",
    "EN_per_k",
    "EI",
    "ssc_sup",
    "ci_halfwidth",
];

/// How the arrival rate is set for a given k (service rate `mu = 1/E[S]`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Load {
    /// `lambda = (k - alpha) mu`
    Alpha(f64),
    /// `lambda = rho k mu`
    Rho(f64),
    /// `rho = theta^(1/k)`, so that `rho^k = theta`.
    RhoPowK(f64),
    /// `lambda = (k - beta sqrt(k)) mu`
    HalfinWhitt(f64),
}

impl Load {
    pub fn rho(&self, k: usize) -> f64 {
        let k = k as f64;
        match *self {
            Load::Alpha(a) => 1.0 - a / k,
            Load::Rho(r) => r,
            Load::RhoPowK(theta) => theta.powf(1.0 / k),
            Load::HalfinWhitt(beta) => 1.0 - beta / k.sqrt(),
        }
    }

    /// Spare capacity `k (1 - rho)`, the NDS parameter of this grid point.
    pub fn alpha(&self, k: usize) -> f64 {
        match *self {
            Load::Alpha(a) => a,
            _ => k as f64 * (1.0 - self.rho(k)),
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            Load::Alpha(a) => ("alpha", a),
            Load::Rho(r) => ("rho", r),
            Load::RhoPowK(t) => ("theta", t),
            Load::HalfinWhitt(b) => ("beta", b),
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(param(format!("{name} must be positive, got {v}")))
        }
    }
}

impl fmt::Display for Load {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Load::Alpha(a) => write!(f, "alpha={a}"),
            Load::Rho(r) => write!(f, "rho={r}"),
            Load::RhoPowK(t) => write!(f, "theta={t}"),
            Load::HalfinWhitt(b) => write!(f, "beta={b}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub figure: String,
    pub k: usize,
    pub load: Load,
    pub policy: Policy,
    pub discipline: Discipline,
    pub dist: ServiceDistribution,
}

impl GridPoint {
    pub fn sim_config(&self, arrivals: u64, seed: u64, warmup: f64) -> Result<SimConfig> {
        self.load.validate()?;
        let mu = 1.0 / self.dist.moments()?.0;
        let lambda = self.load.rho(self.k) * self.k as f64 * mu;
        Ok(SimConfig::new(self.k, lambda, self.policy)
            .service(self.dist)
            .discipline(self.discipline)
            .arrivals(arrivals)
            .warmup(warmup)
            .seed(seed))
    }
}

/// Replication settings shared by every grid point of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSettings {
    pub replications: usize,
    pub arrivals: u64,
    pub seed: u64,
    pub warmup: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            replications: 10,
            arrivals: 1_000_000,
            seed: 1,
            warmup: SimConfig::DEFAULT_WARMUP,
        }
    }
}

/// One output line. Empty options print as empty cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub figure: String,
    /// `None` marks an analytic (k = inf) row.
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub policy: String,
    pub discipline: String,
    pub dist: String,
    pub seed: Option<u64>,
    pub en_per_k: f64,
    pub ei: Option<f64>,
    pub ssc_sup: Option<f64>,
    pub ci_halfwidth: Option<f64>,
    pub unstable: bool,
    /// Replication summary of `en_per_k` for simulated rows.
    pub summary: Option<SummaryStats>,
}

impl ResultRow {
    pub fn analytic(figure: &str, alpha: f64, policy: &str, value: f64) -> Self {
        ResultRow {
            figure: figure.to_string(),
            k: None,
            alpha: Some(alpha),
            rho: None,
            policy: policy.to_string(),
            discipline: String::new(),
            dist: String::new(),
            seed: None,
            en_per_k: value,
            ei: None,
            ssc_sup: None,
            ci_halfwidth: None,
            unstable: false,
            summary: None,
        }
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        vec![
            self.figure.clone(),
            self.k.map_or("inf".to_string(), |k| k.to_string()),
            opt(self.alpha),
            opt(self.rho),
            self.policy.clone(),
            self.discipline.clone(),
            self.dist.clone(),
            self.seed.map_or(String::new(), |s| s.to_string()),
            self.en_per_k.to_string(),
            opt(self.ei),
            opt(self.ssc_sup),
            if self.unstable {
                "unstable".to_string()
            } else {
                opt(self.ci_halfwidth)
            },
        ]
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Worker count: `NDSLB_WORKERS` if set, else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Simulates every grid point for `settings.replications` replications and
/// returns one row per point, in grid order.
pub fn run_grid(points: &[GridPoint], settings: &RunSettings) -> Result<Vec<ResultRow>> {
    if points.is_empty() {
        return Err(param("experiment grid is empty"));
    }
    if settings.replications == 0 {
        return Err(param("replications must be at least 1"));
    }
    let configs = points
        .iter()
        .map(|p| p.sim_config(settings.arrivals, settings.seed, settings.warmup))
        .collect::<Result<Vec<_>>>()?;
    for cfg in &configs {
        cfg.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| (0..settings.replications as u64).map(move |r| (i, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(f64, f64, f64)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, r)| {
                let m = run_simulation(&configs[i].clone().replication(r))?;
                Ok((m.time_avg_n_per_server(), m.time_avg_i(), m.ssc_sup))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let reps = settings.replications;
    points
        .iter()
        .zip(&configs)
        .enumerate()
        .map(|(i, (p, cfg))| {
            let chunk = &results[i * reps..(i + 1) * reps];
            let en: Vec<f64> = chunk.iter().map(|c| c.0).collect();
            let summary = batch_means(&en, settings.warmup)?;
            let mean =
                |f: fn(&(f64, f64, f64)) -> f64| chunk.iter().map(f).sum::<f64>() / reps as f64;
            Ok(ResultRow {
                figure: p.figure.clone(),
                k: Some(p.k),
                alpha: Some(p.load.alpha(p.k)),
                rho: Some(cfg.rho()),
                policy: p.policy.to_string(),
                discipline: p.discipline.to_string(),
                dist: p.dist.to_string(),
                seed: Some(settings.seed),
                en_per_k: summary.estimate,
                ei: Some(mean(|c| c.1)),
                ssc_sup: Some(chunk.iter().map(|c| c.2).fold(0.0, f64::max)),
                ci_halfwidth: summary.ci_halfwidth,
                unstable: !cfg.is_stable(),
                summary: Some(summary),
            })
        })
        .collect()
}

/// Runs the full grid of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_grid(&cfg.grid(), &cfg.settings())
}
