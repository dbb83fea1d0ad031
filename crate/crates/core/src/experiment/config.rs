use std::path::PathBuf;

use crate::distributions::ServiceDistribution;
use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::sim::Discipline;

use super::{GridPoint, Load, RunSettings};

/// One `[section]` of a config file: a product grid plus run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub ks: Vec<usize>,
    pub loads: Vec<Load>,
    pub policies: Vec<Policy>,
    pub disciplines: Vec<Discipline>,
    pub dists: Vec<ServiceDistribution>,
    pub replications: usize,
    pub arrivals_per_rep: u64,
    pub seed_base: u64,
    pub warmup: f64,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(id: &str) -> Self {
        let d = RunSettings::default();
        ExperimentConfig {
            id: id.to_string(),
            ks: Vec::new(),
            loads: Vec::new(),
            policies: Vec::new(),
            disciplines: vec![Discipline::Fifo],
            dists: vec![ServiceDistribution::Exponential(1.0)],
            replications: d.replications,
            arrivals_per_rep: d.arrivals,
            seed_base: d.seed,
            warmup: d.warmup,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |what: &str| {
            Err(Error::Config(format!(
                "[{}] needs at least one {what}",
                self.id
            )))
        };
        if self.ks.is_empty() {
            return missing("k");
        }
        if self.loads.is_empty() {
            return missing("of alpha, rho, theta or beta");
        }
        if self.policies.is_empty() {
            return missing("policy");
        }
        if self.replications == 0 {
            return Err(Error::Config(format!(
                "[{}] reps must be at least 1",
                self.id
            )));
        }
        Ok(())
    }

    /// Grid points in `k, load, policy, discipline, dist` order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &k in &self.ks {
            for &load in &self.loads {
                for &policy in &self.policies {
                    for &discipline in &self.disciplines {
                        for &dist in &self.dists {
                            out.push(GridPoint {
                                figure: self.id.clone(),
                                k,
                                load,
                                policy,
                                discipline,
                                dist,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            replications: self.replications,
            arrivals: self.arrivals_per_rep,
            seed: self.seed_base,
            warmup: self.warmup,
        }
    }
}

/// Parses a flat config: `[id]` headers followed by `key = value` lines,
/// `#` comments, comma-separated lists.
pub fn parse_config(text: &str) -> Result<Vec<ExperimentConfig>> {
    let mut out: Vec<ExperimentConfig> = Vec::new();
    let mut load_key: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix('[') {
            let id = rest
                .strip_suffix(']')
                .ok_or_else(|| at(format!("unterminated section header {line:?}")))?
                .trim();
            if id.is_empty() || id.contains(',') {
                return Err(at(format!("bad section name {id:?}")));
            }
            if out.iter().any(|c| c.id == id) {
                return Err(at(format!("duplicate section [{id}]")));
            }
            out.push(ExperimentConfig::new(id));
            load_key = None;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
        let (key, value) = (key.trim().to_ascii_lowercase(), value.trim());
        let cfg = out
            .last_mut()
            .ok_or_else(|| at("key outside any [section]".to_string()))?;
        let items = || value.split(',').map(str::trim).filter(|s| !s.is_empty());
        let number = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| at(format!("{key}: bad number {s:?}")))
        };
        match key.as_str() {
            "k" => {
                cfg.ks = items()
                    .map(|s| s.parse().map_err(|_| at(format!("k: bad integer {s:?}"))))
                    .collect::<Result<_>>()?
            }
            "alpha" | "rho" | "theta" | "beta" => {
                if let Some(prev) = &load_key {
                    return Err(at(format!(
                        "{key} conflicts with {prev}; give one load parameter"
                    )));
                }
                let make: fn(f64) -> Load = match key.as_str() {
                    "alpha" => Load::Alpha,
                    "rho" => Load::Rho,
                    "theta" => Load::RhoPowK,
                    _ => Load::HalfinWhitt,
                };
                cfg.loads = items()
                    .map(|s| number(s).map(make))
                    .collect::<Result<_>>()?;
                load_key = Some(key.clone());
            }
            "policy" => {
                cfg.policies = items()
                    .map(|s| s.parse().map_err(|e: Error| at(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "discipline" => {
                cfg.disciplines = items()
                    .map(|s| s.parse().map_err(|e: Error| at(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "dist" => {
                cfg.dists = items()
                    .map(|s| s.parse().map_err(|e: Error| at(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "reps" => {
                cfg.replications = value
                    .parse()
                    .map_err(|_| at(format!("reps: bad integer {value:?}")))?
            }
            "arrivals" => cfg.arrivals_per_rep = number(value)? as u64,
            "seed" => {
                cfg.seed_base = value
                    .parse()
                    .map_err(|_| at(format!("seed: bad integer {value:?}")))?
            }
            "warmup" => cfg.warmup = number(value)?,
            "out" => cfg.out = Some(PathBuf::from(value)),
            other => return Err(at(format!("unknown key {other:?}"))),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("config has no [section]".into()));
    }
    for cfg in &out {
        cfg.validate()?;
    }
    Ok(out)
}
