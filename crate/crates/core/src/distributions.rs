//! Seeded random streams and service-time distributions.
//!
//! Every simulator draws from a [`RandomStream`], a ChaCha8 generator keyed
//! by a 64-bit seed with an explicit 64-bit stream id. ChaCha is a
//! counter-based cipher, so streams with distinct ids are independent
//! substreams of the same key and can be handed to separate workers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use statrs::function::gamma::gamma;

use crate::error::{param, Error, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A sibling stream with the same seed and a different id.
    pub fn substream(&self, stream_id: u64) -> Self {
        RandomStream::new(self.seed, stream_id)
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn open_unit(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`; `n` must be positive.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    #[inline]
    pub(crate) fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Job size distribution. All values are in time units at unit server speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ServiceDistribution {
    Deterministic(f64),
    Exponential(f64),
    /// `low` with probability `p_low`, otherwise `high`.
    Bimodal {
        p_low: f64,
        low: f64,
        high: f64,
    },
    Weibull {
        shape: f64,
        scale: f64,
    },
}

/// Named presets, all with mean 1.
pub const PRESETS: [(&str, ServiceDistribution); 6] = [
    ("det", ServiceDistribution::Deterministic(1.0)),
    ("exp", ServiceDistribution::Exponential(1.0)),
    (
        "bim1",
        ServiceDistribution::Bimodal {
            p_low: 0.9,
            low: 0.5,
            high: 5.5,
        },
    ),
    (
        "weib1",
        ServiceDistribution::Weibull {
            shape: 0.5,
            scale: 0.5,
        },
    ),
    (
        "weib2",
        ServiceDistribution::Weibull {
            shape: 1.0 / 3.0,
            scale: 1.0 / 6.0,
        },
    ),
    (
        "bim2",
        ServiceDistribution::Bimodal {
            p_low: 0.99,
            low: 0.5,
            high: 50.5,
        },
    ),
];

impl ServiceDistribution {
    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, d)| *d)
    }

    /// Name of the matching preset, if any.
    pub fn preset_name(&self) -> Option<&'static str> {
        PRESETS.iter().find(|(_, d)| d == self).map(|(n, _)| *n)
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, ServiceDistribution::Exponential(_))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(param(format!(
                    "{what} must be positive and finite, got {v}"
                )))
            }
        };
        match *self {
            ServiceDistribution::Deterministic(v) => positive(v, "deterministic value"),
            ServiceDistribution::Exponential(rate) => positive(rate, "exponential rate"),
            ServiceDistribution::Bimodal { p_low, low, high } => {
                if !(p_low > 0.0 && p_low < 1.0) {
                    return Err(param(format!("p_low must lie in (0,1), got {p_low}")));
                }
                positive(low, "bimodal low value")?;
                positive(high, "bimodal high value")
            }
            ServiceDistribution::Weibull { shape, scale } => {
                positive(shape, "weibull shape")?;
                positive(scale, "weibull scale")
            }
        }
    }

    /// Exact mean and variance.
    pub fn moments(&self) -> Result<(f64, f64)> {
        self.validate()?;
        Ok(match *self {
            ServiceDistribution::Deterministic(v) => (v, 0.0),
            ServiceDistribution::Exponential(rate) => (1.0 / rate, 1.0 / (rate * rate)),
            ServiceDistribution::Bimodal { p_low, low, high } => {
                let mean = p_low * low + (1.0 - p_low) * high;
                let second = p_low * low * low + (1.0 - p_low) * high * high;
                (mean, second - mean * mean)
            }
            ServiceDistribution::Weibull { shape, scale } => {
                let g1 = gamma(1.0 + 1.0 / shape);
                let g2 = gamma(1.0 + 2.0 / shape);
                (scale * g1, scale * scale * (g2 - g1 * g1))
            }
        })
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Result<f64> {
        self.validate()?;
        Ok(self.sample_unchecked(stream))
    }

    /// Draw without re-validating; callers validate once up front.
    #[inline]
    pub(crate) fn sample_unchecked(&self, stream: &mut RandomStream) -> f64 {
        match *self {
            ServiceDistribution::Deterministic(v) => v,
            ServiceDistribution::Exponential(rate) => stream.exp1() / rate,
            ServiceDistribution::Bimodal { p_low, low, high } => {
                if stream.open_unit() <= p_low {
                    low
                } else {
                    high
                }
            }
            ServiceDistribution::Weibull { shape, scale } => {
                scale * (-stream.open_unit().ln()).powf(1.0 / shape)
            }
        }
    }
}

impl fmt::Display for ServiceDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(name) = self.preset_name() {
            return f.write_str(name);
        }
        match *self {
            ServiceDistribution::Deterministic(v) => write!(f, "det:{v}"),
            ServiceDistribution::Exponential(r) => write!(f, "exp:{r}"),
            ServiceDistribution::Bimodal { p_low, low, high } => {
                write!(f, "bim:{p_low}:{low}:{high}")
            }
            ServiceDistribution::Weibull { shape, scale } => write!(f, "weib:{shape}:{scale}"),
        }
    }
}

impl FromStr for ServiceDistribution {
    type Err = Error;

    /// Accepts a preset name or `det:v`, `exp:rate`, `bim:p:low:high`,
    /// `weib:shape:scale`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(d) = ServiceDistribution::preset(s.trim()) {
            return Ok(d);
        }
        let parts: Vec<&str> = s.trim().split(':').collect();
        let nums = parts[1..]
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| param(format!("bad number {p:?} in distribution {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let dist = match (parts[0].to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("det", [v]) => ServiceDistribution::Deterministic(*v),
            ("exp", [r]) => ServiceDistribution::Exponential(*r),
            ("bim", [p, l, h]) => ServiceDistribution::Bimodal {
                p_low: *p,
                low: *l,
                high: *h,
            },
            ("weib", [k, s]) => ServiceDistribution::Weibull {
                shape: *k,
                scale: *s,
            },
            _ => return Err(param(format!("unknown distribution {s:?}"))),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Exponential inter-arrival time at `rate`.
pub fn exp_interarrival(rate: f64, stream: &mut RandomStream) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(param(format!("arrival rate must be positive, got {rate}")));
    }
    Ok(stream.exp1() / rate)
}
