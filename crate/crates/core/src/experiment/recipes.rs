//! Data grids behind each figure.
//!
//! Simulated figures plot against `rho^k`, which tends to `e^(-alpha)` in
//! the NDS regime, so they use [`Load::RhoPowK`] on a common grid and carry
//! analytic `k = inf` overlay rows. Figure 3 is purely analytic and stores
//! the ratio of limit means in the `EN_per_k` column.

use std::fmt;
use std::str::FromStr;

use crate::diffusion::{mean_cq, mean_iqf, mean_jsq};
use crate::distributions::{ServiceDistribution, PRESETS};
use crate::error::{param, Error, Result};
use crate::policies::Policy;
use crate::sim::Discipline;

use super::{run_grid, GridPoint, Load, ResultRow, RunSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Figure {
    Fig1,
    Fig2a,
    Fig2b,
    Fig3,
    Fig4a,
    Fig4b,
    Fig5a,
    Fig5b,
    Fig5c,
    Fig5d,
}

impl Figure {
    pub const ALL: [Figure; 10] = [
        Figure::Fig1,
        Figure::Fig2a,
        Figure::Fig2b,
        Figure::Fig3,
        Figure::Fig4a,
        Figure::Fig4b,
        Figure::Fig5a,
        Figure::Fig5b,
        Figure::Fig5c,
        Figure::Fig5d,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2a => "fig2a",
            Figure::Fig2b => "fig2b",
            Figure::Fig3 => "fig3",
            Figure::Fig4a => "fig4a",
            Figure::Fig4b => "fig4b",
            Figure::Fig5a => "fig5a",
            Figure::Fig5b => "fig5b",
            Figure::Fig5c => "fig5c",
            Figure::Fig5d => "fig5d",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Figure::Fig1 => {
                "JSQ mean jobs per server vs rho^k, k = 4, 16, 64, with the diffusion mean"
            }
            Figure::Fig2a => {
                "IQF mean jobs per server vs rho^k, k = 4, 16, 64, with the diffusion mean"
            }
            Figure::Fig2b => {
                "I1F mean jobs per server vs rho^k, k = 4, 16, 64, with the JSQ diffusion mean"
            }
            Figure::Fig3 => {
                "limit mean ratios JSQ/CQ and IQF/CQ vs theta = e^-alpha (ratio in EN_per_k)"
            }
            Figure::Fig4a => "IQF and JSQ side by side vs rho^k, k = 4, 16, 64",
            Figure::Fig4b => "I1F and JSQ side by side vs rho^k, k = 4, 16, 64",
            Figure::Fig5a => "processor sharing, k = 4, rho = 0.9, six job size laws",
            Figure::Fig5b => "processor sharing, NDS: k = 64, 256 with alpha = 0.4",
            Figure::Fig5c => "processor sharing, heavy traffic: k = 2, rho = 0.975, 0.99",
            Figure::Fig5d => {
                "processor sharing, Halfin-Whitt: k = 64, 256 with lambda = k - sqrt(k)/2"
            }
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Figure::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| param(format!("unknown figure {s:?}; expected one of fig1..fig5d")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReproduceOptions {
    pub settings: RunSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reproduction {
    pub figure: Figure,
    pub rows: Vec<ResultRow>,
    /// Human-readable description of the grid and run settings.
    pub notes: String,
}

/// `rho^k` values on the x-axis of the simulated figures.
pub fn theta_grid() -> Vec<f64> {
    (0..10).map(|i| 0.05 + 0.1 * i as f64).collect()
}

const SMALL_KS: [usize; 3] = [4, 16, 64];

fn exp1() -> ServiceDistribution {
    ServiceDistribution::Exponential(1.0)
}

fn nds_points(figure: Figure, policies: &[Policy]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &k in &SMALL_KS {
        for theta in theta_grid() {
            for &policy in policies {
                out.push(GridPoint {
                    figure: figure.id().to_string(),
                    k,
                    load: Load::RhoPowK(theta),
                    policy,
                    discipline: Discipline::Fifo,
                    dist: exp1(),
                });
            }
        }
    }
    out
}

fn ps_points(figure: Figure, ks: &[usize], loads: &[Load]) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &k in ks {
        for &load in loads {
            for policy in [Policy::Jsq, Policy::LeastWorkLeft, Policy::Random] {
                for (_, dist) in PRESETS {
                    out.push(GridPoint {
                        figure: figure.id().to_string(),
                        k,
                        load,
                        policy,
                        discipline: Discipline::ProcessorSharing,
                        dist,
                    });
                }
            }
        }
    }
    out
}

fn overlay(figure: Figure, policy: &str, mean: fn(f64) -> Result<f64>) -> Result<Vec<ResultRow>> {
    theta_grid()
        .into_iter()
        .map(|theta| {
            let alpha = -theta.ln();
            Ok(ResultRow::analytic(
                figure.id(),
                alpha,
                policy,
                mean(alpha)?,
            ))
        })
        .collect()
}

/// The grid behind `figure`. Simulated points use `opts.settings`.
pub fn reproduce(figure: Figure, opts: &ReproduceOptions) -> Result<Reproduction> {
    let s = &opts.settings;
    let sim = |points: Vec<GridPoint>| run_grid(&points, s);
    let rows = match figure {
        Figure::Fig1 => {
            let mut rows = sim(nds_points(figure, &[Policy::Jsq]))?;
            rows.extend(overlay(figure, "jsq", mean_jsq)?);
            rows
        }
        Figure::Fig2a => {
            let mut rows = sim(nds_points(figure, &[Policy::Iqf]))?;
            rows.extend(overlay(figure, "iqf", mean_iqf)?);
            rows
        }
        Figure::Fig2b => {
            let mut rows = sim(nds_points(figure, &[Policy::I1f]))?;
            rows.extend(overlay(figure, "jsq", mean_jsq)?);
            rows
        }
        Figure::Fig3 => (1..100)
            .flat_map(|i| {
                let theta = i as f64 / 100.0;
                let alpha = -theta.ln();
                [
                    ("jsq/cq", mean_jsq as fn(f64) -> Result<f64>),
                    ("iqf/cq", mean_iqf),
                ]
                .into_iter()
                .map(move |(name, mean)| {
                    Ok(ResultRow::analytic(
                        figure.id(),
                        alpha,
                        name,
                        mean(alpha)? / mean_cq(alpha)?,
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Figure::Fig4a => sim(nds_points(figure, &[Policy::Iqf, Policy::Jsq]))?,
        Figure::Fig4b => sim(nds_points(figure, &[Policy::I1f, Policy::Jsq]))?,
        Figure::Fig5a => sim(ps_points(figure, &[4], &[Load::Rho(0.9)]))?,
        Figure::Fig5b => sim(ps_points(figure, &[64, 256], &[Load::Alpha(0.4)]))?,
        Figure::Fig5c => sim(ps_points(
            figure,
            &[2],
            &[Load::Rho(0.975), Load::Rho(0.99)],
        ))?,
        Figure::Fig5d => sim(ps_points(figure, &[64, 256], &[Load::HalfinWhitt(0.5)]))?,
    };
    let notes = if figure == Figure::Fig3 {
        format!("{figure}: {}", figure.description())
    } else {
        format!(
            "{figure}: {}; {} replications x {} arrivals, warmup {}, seed {}",
            figure.description(),
            s.replications,
            s.arrivals,
            s.warmup,
            s.seed
        )
    };
    Ok(Reproduction {
        figure,
        rows,
        notes,
    })
}
