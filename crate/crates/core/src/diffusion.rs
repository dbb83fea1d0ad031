//! Limiting diffusions of the scaled job count `N(kt)/k`.
//!
//! Under JSQ the limit solves
//!
//! ```text
//! dN = mu * [ (2 - N)_+ / (N - 1) - alpha ] dt + sqrt(2 mu) dB
//! ```
//!
//! I1F has the same limit. IQF drops the `(2 - N)_+` factor, giving
//! `mu * [1/(N - 1) - alpha]`, and CQ is Brownian motion with drift
//! `-alpha * mu` reflected at one. All three have closed-form stationary
//! laws on `[1, inf)`; [`density_from_drift`] recovers them numerically
//! from the drift alone as `exp(-V)` with `V' = -drift / mu`.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::distributions::RandomStream;
use crate::error::{param, Error, Result};
use crate::policies::Policy;
use crate::quadrature;

/// Lower clamp for drifts singular at one.
pub const DELTA_FLOOR: f64 = 1e-9;

/// Quadrature tolerances used throughout this module.
const ABS_TOL: f64 = 1e-14;
const REL_TOL: f64 = 1e-13;
/// Rounding in `n - 1` near the floor limits the potential to about this.
const POTENTIAL_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NdsParams {
    pub alpha: f64,
    pub mu: f64,
}

impl NdsParams {
    pub fn new(alpha: f64, mu: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(param(format!("mu must be positive, got {mu}")));
        }
        Ok(NdsParams { alpha, mu })
    }

    pub fn unit(alpha: f64) -> Result<Self> {
        NdsParams::new(alpha, 1.0)
    }

    /// Right end of the truncated support, `1 + 60 / alpha`.
    pub fn truncation(&self) -> f64 {
        1.0 + 60.0 / self.alpha.min(self.alpha + 1.0)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(param(format!("alpha must be positive, got {alpha}")))
    }
}

/// Policies with a closed-form diffusion limit. JSQ covers I1F.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LimitPolicy {
    Jsq,
    Cq,
    Iqf,
}

impl LimitPolicy {
    pub fn from_policy(p: Policy) -> Result<Self> {
        match p {
            Policy::Jsq | Policy::I1f | Policy::IdleDepth(1) => Ok(LimitPolicy::Jsq),
            Policy::CentralQueue => Ok(LimitPolicy::Cq),
            Policy::Iqf | Policy::IdleDepth(0) => Ok(LimitPolicy::Iqf),
            other => Err(param(format!("no diffusion limit implemented for {other}"))),
        }
    }

    pub fn mean(&self, alpha: f64) -> Result<f64> {
        match self {
            LimitPolicy::Jsq => mean_jsq(alpha),
            LimitPolicy::Cq => mean_cq(alpha),
            LimitPolicy::Iqf => mean_iqf(alpha),
        }
    }

    pub fn density(&self, alpha: f64) -> Result<StationaryDensity> {
        match self {
            LimitPolicy::Jsq => StationaryDensity::jsq(alpha),
            LimitPolicy::Cq => StationaryDensity::cq(alpha),
            LimitPolicy::Iqf => StationaryDensity::iqf(alpha),
        }
    }
}

impl fmt::Display for LimitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitPolicy::Jsq => "jsq",
            LimitPolicy::Cq => "cq",
            LimitPolicy::Iqf => "iqf",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftSpec {
    pub policy: LimitPolicy,
    pub params: NdsParams,
    /// Reflecting boundary (CQ reflects at one).
    pub reflection_at: Option<f64>,
}

impl DriftSpec {
    pub fn new(policy: LimitPolicy, params: NdsParams) -> Self {
        DriftSpec {
            policy,
            params,
            reflection_at: (policy == LimitPolicy::Cq).then_some(1.0),
        }
    }

    pub fn jsq(params: NdsParams) -> Self {
        DriftSpec::new(LimitPolicy::Jsq, params)
    }

    pub fn cq(params: NdsParams) -> Self {
        DriftSpec::new(LimitPolicy::Cq, params)
    }

    pub fn iqf(params: NdsParams) -> Self {
        DriftSpec::new(LimitPolicy::Iqf, params)
    }

    pub fn is_singular(&self) -> bool {
        self.policy != LimitPolicy::Cq
    }

    /// Drift in jobs per server per unit time.
    pub fn drift(&self, n: f64) -> Result<f64> {
        if self.is_singular() && !(n > 1.0) {
            return Err(Error::Domain(format!(
                "{} drift is singular at n <= 1, got n = {n}",
                self.policy
            )));
        }
        if !self.is_singular() && !(n >= 1.0) {
            return Err(Error::Domain(format!(
                "cq drift is defined for n >= 1, got n = {n}"
            )));
        }
        Ok(self.drift_unchecked(n))
    }

    #[inline]
    fn drift_unchecked(&self, n: f64) -> f64 {
        let NdsParams { alpha, mu } = self.params;
        match self.policy {
            LimitPolicy::Jsq => mu * ((2.0 - n).max(0.0) / (n - 1.0) - alpha),
            LimitPolicy::Iqf => mu * (1.0 / (n - 1.0) - alpha),
            LimitPolicy::Cq => -alpha * mu,
        }
    }

    fn lower(&self) -> f64 {
        if self.is_singular() {
            1.0 + DELTA_FLOOR
        } else {
            1.0
        }
    }
}

// ---------------------------------------------------------------------------
// Closed-form stationary laws

/// Normalizing constant `C` of the JSQ density.
pub fn normalizer_jsq(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(log_normalizer_jsq(alpha).exp())
}

/// `ln C`, with `1/C = 1/(a(1+a)^2) + e^(1+a)/(1+a)^2` rearranged so large
/// alpha does not overflow.
fn log_normalizer_jsq(alpha: f64) -> f64 {
    let b = 1.0 + alpha;
    2.0 * b.ln() - b - ((-b).exp() / alpha).ln_1p()
}

/// The same constant from the split `(e^(1+a) - 1)/(1+a)^2 + 1/a - 1/(1+a)`.
pub fn normalizer_jsq_split(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let b = 1.0 + alpha;
    Ok(1.0 / ((b.exp() - 1.0) / (b * b) + 1.0 / alpha - 1.0 / b))
}

pub fn density_jsq(n: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_support(n)?;
    let log_c = log_normalizer_jsq(alpha);
    Ok(if n >= 2.0 {
        (log_c - alpha * (n - 2.0)).exp()
    } else {
        (n - 1.0) * (log_c - (alpha + 1.0) * (n - 2.0)).exp()
    })
}

/// `1 + C [ (a^2+4a+1)/(a^2 (1+a)^3) + 2 e^(a+1)/(1+a)^3 ]`, evaluated in a
/// form that stays finite for large alpha.
pub fn mean_jsq(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let b = 1.0 + alpha;
    let tail = (-b).exp();
    let num = 2.0 + tail * (alpha * alpha + 4.0 * alpha + 1.0) / (alpha * alpha);
    let den = b * (1.0 + tail / alpha);
    Ok(1.0 + num / den)
}

pub fn cdf_jsq(n: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if n <= 1.0 {
        return Ok(0.0);
    }
    let b = 1.0 + alpha;
    let d = 1.0 + (-b).exp() / alpha;
    let y = (n - 1.0).min(1.0);
    let lower = (1.0 - (-b * y).exp() * (1.0 + b * y)) / d;
    if n <= 2.0 {
        return Ok(lower);
    }
    let c = log_normalizer_jsq(alpha).exp();
    Ok(lower + c * (-(-alpha * (n - 2.0)).exp_m1()) / alpha)
}

pub fn density_cq(n: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_support(n)?;
    Ok(alpha * (-alpha * (n - 1.0)).exp())
}

pub fn mean_cq(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(1.0 + 1.0 / alpha)
}

pub fn cdf_cq(n: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(if n <= 1.0 {
        0.0
    } else {
        -(-alpha * (n - 1.0)).exp_m1()
    })
}

pub fn density_iqf(n: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_support(n)?;
    let y = n - 1.0;
    Ok(alpha * alpha * y * (-alpha * y).exp())
}

pub fn mean_iqf(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(1.0 + 2.0 / alpha)
}

pub fn cdf_iqf(n: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if n <= 1.0 {
        return Ok(0.0);
    }
    let ay = alpha * (n - 1.0);
    Ok(1.0 - (-ay).exp() * (1.0 + ay))
}

fn check_support(n: f64) -> Result<()> {
    if n >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "stationary densities live on [1, inf), got n = {n}"
        )))
    }
}

// ---------------------------------------------------------------------------
// Density objects

/// Unnormalized piece shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PieceForm {
    /// `exp(-rate * (n - anchor))`
    Exp { rate: f64, anchor: f64 },
    /// `(n - 1) * exp(-rate * (n - anchor))`
    LinearExp { rate: f64, anchor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub form: PieceForm,
}

impl Piece {
    fn eval(&self, n: f64) -> f64 {
        match self.form {
            PieceForm::Exp { rate, anchor } => (-rate * (n - anchor)).exp(),
            PieceForm::LinearExp { rate, anchor } => (n - 1.0) * (-rate * (n - anchor)).exp(),
        }
    }
}

/// Potential `V` tabulated at nodes; between nodes it is integrated on
/// demand from the drift.
#[derive(Clone)]
pub struct Potential {
    drift: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    mu: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("mu", &self.mu)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

impl Potential {
    fn build(
        drift: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        mu: f64,
        nodes: Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(nodes.len());
        let mut v = 0.0;
        values.push(v);
        for w in nodes.windows(2) {
            let e =
                quadrature::integrate(|x| drift(x) / mu, w[0], w[1], POTENTIAL_TOL, POTENTIAL_TOL)?;
            v -= e.value;
            values.push(v);
        }
        Ok(Potential {
            drift,
            mu,
            nodes,
            values,
        })
    }

    pub fn value(&self, x: f64) -> f64 {
        let i = self
            .nodes
            .partition_point(|&node| node <= x)
            .saturating_sub(1);
        let from = self.nodes[i];
        if x == from {
            return self.values[i];
        }
        let mu = self.mu;
        let drift = &self.drift;
        let step = quadrature::integrate(|y| drift(y) / mu, from, x, POTENTIAL_TOL, POTENTIAL_TOL)
            .map(|e| e.value)
            .unwrap_or(f64::NAN);
        self.values[i] - step
    }

    pub fn lower(&self) -> f64 {
        self.nodes[0]
    }

    pub fn upper(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
}

/// Stationary density on `[1, upper]`: either closed-form pieces times the
/// normalizer `C`, or `C * exp(-V)` from a tabulated potential.
#[derive(Clone, Debug)]
pub struct StationaryDensity {
    pub support_start: f64,
    pub pieces: Vec<Piece>,
    pub normalizer: f64,
    pub potential: Option<Potential>,
    /// Truncation point for numeric integrals.
    pub upper: f64,
}

impl StationaryDensity {
    pub fn jsq(alpha: f64) -> Result<Self> {
        let c = normalizer_jsq(alpha)?;
        let b = alpha + 1.0;
        Ok(StationaryDensity {
            support_start: 1.0,
            pieces: vec![
                Piece {
                    start: 1.0,
                    end: 2.0,
                    form: PieceForm::LinearExp {
                        rate: b,
                        anchor: 2.0,
                    },
                },
                Piece {
                    start: 2.0,
                    end: f64::INFINITY,
                    form: PieceForm::Exp {
                        rate: alpha,
                        anchor: 2.0,
                    },
                },
            ],
            normalizer: c,
            potential: None,
            upper: NdsParams::unit(alpha)?.truncation(),
        })
    }

    pub fn cq(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(StationaryDensity {
            support_start: 1.0,
            pieces: vec![Piece {
                start: 1.0,
                end: f64::INFINITY,
                form: PieceForm::Exp {
                    rate: alpha,
                    anchor: 1.0,
                },
            }],
            normalizer: alpha,
            potential: None,
            upper: NdsParams::unit(alpha)?.truncation(),
        })
    }

    pub fn iqf(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(StationaryDensity {
            support_start: 1.0,
            pieces: vec![Piece {
                start: 1.0,
                end: f64::INFINITY,
                form: PieceForm::LinearExp {
                    rate: alpha,
                    anchor: 1.0,
                },
            }],
            normalizer: alpha * alpha,
            potential: None,
            upper: NdsParams::unit(alpha)?.truncation(),
        })
    }

    pub fn pdf(&self, n: f64) -> f64 {
        if let Some(p) = &self.potential {
            if n < p.lower() || n > p.upper() {
                return 0.0;
            }
            return self.normalizer * (-p.value(n)).exp();
        }
        if n < self.support_start {
            return 0.0;
        }
        self.pieces
            .iter()
            .find(|piece| n >= piece.start && n <= piece.end)
            .map_or(0.0, |piece| self.normalizer * piece.eval(n))
    }

    /// Breakpoints for quadrature over `[a, b]`.
    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts = vec![a];
        let inner: Vec<f64> = match &self.potential {
            Some(p) => p.nodes.clone(),
            None => self.pieces.iter().map(|piece| piece.start).collect(),
        };
        pts.extend(inner.into_iter().filter(|&x| x > a && x < b));
        pts.push(b);
        pts
    }

    fn integrate_over<F: Fn(f64) -> f64>(&self, g: F, a: f64, b: f64) -> Result<f64> {
        let a = a.max(self.lower());
        let b = b.min(self.upper);
        if b <= a {
            return Ok(0.0);
        }
        quadrature::integrate_pieces(
            |x| g(x) * self.pdf(x),
            &self.breakpoints(a, b),
            ABS_TOL,
            REL_TOL,
        )
    }

    fn lower(&self) -> f64 {
        self.potential
            .as_ref()
            .map_or(self.support_start, |p| p.lower())
    }

    pub fn total_mass(&self) -> Result<f64> {
        self.integrate_over(|_| 1.0, self.lower(), self.upper)
    }

    pub fn mean(&self) -> Result<f64> {
        self.integrate_over(|x| x, self.lower(), self.upper)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.integrate_over(|_| 1.0, self.lower(), x)
    }

    /// `P(N >= x)`, integrated over `[x, upper]` so tails keep precision.
    pub fn ccdf(&self, x: f64) -> Result<f64> {
        self.integrate_over(|_| 1.0, x, self.upper)
    }
}

/// Builds `C * exp(-V)` with `V(x) = -∫ drift / mu` from the drift of `spec`.
pub fn density_from_drift(spec: &DriftSpec) -> Result<StationaryDensity> {
    let s = *spec;
    density_from_fn(
        move |x| s.drift_unchecked(x),
        spec.params.mu,
        spec.lower(),
        spec.params.truncation(),
    )
}

/// Numeric stationary density of `dX = drift(X) dt + sqrt(2 mu) dB` on
/// `[lower, upper]`, reflected at `lower`.
pub fn density_from_fn<F>(drift: F, mu: f64, lower: f64, upper: f64) -> Result<StationaryDensity>
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    if !(upper > lower && lower.is_finite() && upper.is_finite()) {
        return Err(param("density support must be finite with upper > lower"));
    }
    let nodes = potential_nodes(lower, upper);
    let potential = Potential::build(Arc::new(drift), mu, nodes)?;
    let mut density = StationaryDensity {
        support_start: lower,
        pieces: Vec::new(),
        normalizer: 1.0,
        potential: Some(potential),
        upper,
    };
    let mass = density.total_mass()?;
    let peak = density
        .potential
        .as_ref()
        .unwrap()
        .values
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v));
    let edge = (peak - density.potential.as_ref().unwrap().values.last().unwrap()).exp();
    if !mass.is_finite() || mass <= 0.0 || edge > 1e-12 {
        return Err(Error::Domain(format!(
            "stationary normalizer diverges (mass {mass:e}, mass ratio at truncation {edge:e})"
        )));
    }
    density.normalizer = 1.0 / mass;
    Ok(density)
}

/// Geometric nodes near the lower end (resolving a 1/(n-1) drift), then a
/// uniform grid.
fn potential_nodes(lower: f64, upper: f64) -> Vec<f64> {
    let mut nodes = vec![lower];
    let base = lower.floor();
    let mut gap = lower - base;
    if gap > 0.0 {
        let ratio = 10f64.powf(1.0 / 20.0);
        while base + gap * ratio < (base + 1.0).min(upper) {
            gap *= ratio;
            nodes.push(base + gap);
        }
    }
    let step = 0.25;
    let mut x = (nodes.last().unwrap() / step).floor() * step + step;
    while x < upper {
        if x > *nodes.last().unwrap() {
            nodes.push(x);
        }
        x += step;
    }
    nodes.push(upper);
    nodes
}

// ---------------------------------------------------------------------------
// Euler–Maruyama

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    Gaussian,
    /// Deterministic drift-only path.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Treats the `mu/(n-1)` term implicitly; positive by construction.
    DriftImplicit,
    /// Plain explicit step with the `1 + DELTA_FLOOR` clamp.
    Explicit,
}

#[derive(Clone, Copy, Debug)]
pub struct EmOptions {
    pub noise: Noise,
    pub scheme: Scheme,
    /// Store every `record_every`-th value.
    pub record_every: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            noise: Noise::Gaussian,
            scheme: Scheme::DriftImplicit,
            record_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdePath {
    pub dt: f64,
    pub record_every: usize,
    /// `values[i]` is the state after `i * record_every` steps.
    pub values: Vec<f64>,
    pub steps: usize,
    /// Minimum over every step, recorded or not.
    pub min: f64,
    /// Time average over all steps.
    pub time_average: f64,
}

impl SdePath {
    /// Recorded values after discarding the leading `fraction`.
    pub fn after_burn_in(&self, fraction: f64) -> &[f64] {
        let skip = (fraction * self.values.len() as f64).ceil() as usize;
        &self.values[skip.min(self.values.len())..]
    }
}

/// Integrates the diffusion of `spec` from `n0` for `horizon` time units.
pub fn euler_maruyama(
    spec: &DriftSpec,
    n0: f64,
    dt: f64,
    horizon: f64,
    stream: &mut RandomStream,
) -> Result<SdePath> {
    euler_maruyama_with(spec, n0, dt, horizon, stream, EmOptions::default())
}

pub fn euler_maruyama_with(
    spec: &DriftSpec,
    n0: f64,
    dt: f64,
    horizon: f64,
    stream: &mut RandomStream,
    opts: EmOptions,
) -> Result<SdePath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(param(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) {
        return Err(param(format!("horizon must be nonnegative, got {horizon}")));
    }
    if opts.record_every == 0 {
        return Err(param("record_every must be positive"));
    }
    if spec.is_singular() && !(n0 > 1.0) || !(n0 >= 1.0) {
        return Err(Error::Domain(format!(
            "initial value {n0} outside the diffusion domain"
        )));
    }
    let steps = (horizon / dt).round() as usize;
    let NdsParams { alpha, mu } = spec.params;
    let sd = (2.0 * mu * dt).sqrt();
    let floor = 1.0 + DELTA_FLOOR;
    let mut values = Vec::with_capacity(steps / opts.record_every + 1);
    values.push(n0);
    let (mut n, mut min, mut sum) = (n0, n0, 0.0);
    for step in 1..=steps {
        let z: f64 = match opts.noise {
            Noise::Gaussian => StandardNormal.sample(stream),
            Noise::Zero => 0.0,
        };
        let shock = sd * z;
        n = match (spec.policy, opts.scheme) {
            (LimitPolicy::Cq, _) => {
                let next = n - alpha * mu * dt + shock;
                next.max(spec.reflection_at.unwrap_or(1.0))
            }
            (LimitPolicy::Jsq, Scheme::DriftImplicit) if n < 2.0 => {
                implicit_bessel_step(n - 1.0, -(1.0 + alpha) * mu * dt + shock, mu * dt) + 1.0
            }
            (LimitPolicy::Iqf, Scheme::DriftImplicit) => {
                implicit_bessel_step(n - 1.0, -alpha * mu * dt + shock, mu * dt) + 1.0
            }
            _ => (n + spec.drift_unchecked(n) * dt + shock).max(floor),
        };
        if !n.is_finite() {
            return Err(Error::Integration {
                step,
                reason: format!("state became {n}"),
            });
        }
        if spec.is_singular() && n < floor {
            n = floor;
        }
        min = min.min(n);
        sum += n;
        if step % opts.record_every == 0 {
            values.push(n);
        }
    }
    Ok(SdePath {
        dt,
        record_every: opts.record_every,
        values,
        steps,
        min,
        time_average: if steps > 0 { sum / steps as f64 } else { n0 },
    })
}

/// Solves `y' = y + c + h / y'` for the positive root.
#[inline]
fn implicit_bessel_step(y: f64, c: f64, h: f64) -> f64 {
    let b = y + c;
    0.5 * (b + (b * b + 4.0 * h).sqrt())
}

/// Kolmogorov–Smirnov distance between samples and a CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Comparisons

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioSup {
    pub alpha_star: f64,
    pub sup_ratio: f64,
    /// Whether the coarse grid showed a single interior peak.
    pub unimodal: bool,
}

pub const RATIO_ALPHA_MIN: f64 = 1e-4;
pub const RATIO_ALPHA_MAX: f64 = 50.0;

/// Maximizes `mean_num(alpha) / mean_den(alpha)` over `[1e-4, 50]`.
pub fn ratio_sup(num: LimitPolicy, den: LimitPolicy) -> Result<RatioSup> {
    let ratio = |a: f64| -> Result<f64> { Ok(num.mean(a)? / den.mean(a)?) };
    let grid = |count: usize| -> Vec<f64> {
        let (lo, hi) = (RATIO_ALPHA_MIN.ln(), RATIO_ALPHA_MAX.ln());
        (0..count)
            .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
            .collect()
    };
    let scan = |alphas: &[f64]| -> Result<(usize, usize, Vec<f64>)> {
        let values = alphas
            .iter()
            .map(|&a| ratio(a))
            .collect::<Result<Vec<f64>>>()?;
        let best = (0..values.len())
            .max_by(|&i, &j| values[i].total_cmp(&values[j]))
            .unwrap();
        let peaks = (1..values.len() - 1)
            .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
            .count();
        Ok((best, peaks, values))
    };
    let mut alphas = grid(200);
    let (mut best, peaks, mut values) = scan(&alphas)?;
    let unimodal = peaks <= 1;
    if !unimodal {
        alphas = grid(20_000);
        (best, _, values) = scan(&alphas)?;
    }
    let lo = alphas[best.saturating_sub(1)];
    let hi = alphas[(best + 1).min(alphas.len() - 1)];
    let (alpha_star, sup_ratio) = golden_max(ratio, lo, hi, 1e-12)?;
    // the bracket is closed: keep the grid value if it is better
    let (alpha_star, sup_ratio) = if values[best] > sup_ratio {
        (alphas[best], values[best])
    } else {
        (alpha_star, sup_ratio)
    };
    Ok(RatioSup {
        alpha_star,
        sup_ratio,
        unimodal,
    })
}

fn golden_max<F: Fn(f64) -> Result<f64>>(
    f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol * (1.0 + c.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Mean-field tail `P(queue >= level)` for power-of-d at load `rho`:
/// `rho^((d^level - 1)/(d - 1))`.
pub fn pod_meanfield_tail(rho: f64, level: u32, d: u32) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(param(format!("rho must lie in (0,1), got {rho}")));
    }
    if level < 1 {
        return Err(param("level must be at least 1"));
    }
    if d < 2 {
        return Err(param(format!("d must be at least 2, got {d}")));
    }
    let exponent: f64 = (0..level).map(|i| (d as f64).powi(i as i32)).sum();
    Ok(rho.powf(exponent))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DominanceReport {
    pub holds: bool,
    /// `max_x (ccdf_a(x) - ccdf_b(x))_+` over the grid.
    pub max_violation: f64,
}

/// Checks `a <=_st b`, i.e. `ccdf_a(x) <= ccdf_b(x) + tol` on `grid`.
pub fn check_stochastic_dominance(
    a: &StationaryDensity,
    b: &StationaryDensity,
    grid: &[f64],
    tol: f64,
) -> Result<DominanceReport> {
    let mut worst: f64 = 0.0;
    for &x in grid {
        worst = worst.max(a.ccdf(x)? - b.ccdf(x)?);
    }
    Ok(DominanceReport {
        holds: worst <= tol,
        max_violation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(alpha: f64) -> NdsParams {
        NdsParams::unit(alpha).unwrap()
    }

    #[test]
    fn drift_values() {
        assert_eq!(
            DriftSpec::jsq(NdsParams::unit(1e-300).unwrap())
                .drift(1.5)
                .unwrap(),
            1.0 - 1e-300
        );
        for a in [0.1, 1.0, 3.0] {
            for n in [2.0, 2.5, 10.0] {
                assert_eq!(DriftSpec::jsq(unit(a)).drift(n).unwrap(), -a);
            }
        }
        assert_eq!(DriftSpec::iqf(unit(1.0)).drift(2.0).unwrap(), 0.0);
        assert_eq!(DriftSpec::cq(unit(0.7)).drift(1.0).unwrap(), -0.7);
        assert!(matches!(
            DriftSpec::jsq(unit(1.0)).drift(1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            DriftSpec::iqf(unit(1.0)).drift(0.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            DriftSpec::cq(unit(1.0)).drift(0.99),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn drift_ordering_on_grid() {
        for a in [0.05, 0.4, 2.0] {
            let (j, c, i) = (
                DriftSpec::jsq(unit(a)),
                DriftSpec::cq(unit(a)),
                DriftSpec::iqf(unit(a)),
            );
            for step in 1..=4000 {
                let n = 1.0 + step as f64 * 1e-3 * 2.5;
                let (dj, dc, di) = (
                    j.drift(n).unwrap(),
                    c.drift(n).unwrap(),
                    i.drift(n).unwrap(),
                );
                assert!(di >= dj && dj >= -a, "n={n}");
                if n >= 2.0 {
                    assert_eq!(dj, dc);
                    assert!(di > dc);
                }
            }
        }
    }

    #[test]
    fn closed_form_identities() {
        assert_eq!(mean_cq(1.0).unwrap(), 2.0);
        assert_eq!(mean_iqf(1.0).unwrap(), 3.0);
        assert_eq!(mean_iqf(0.5).unwrap(), 5.0);
        assert_eq!(density_cq(1.0, 2.0).unwrap(), 2.0);
        // 1/C = 1/4 + e^2/4 at alpha = 1
        let c = normalizer_jsq(1.0).unwrap();
        assert!((1.0 / c - (0.25 + std::f64::consts::E.powi(2) / 4.0)).abs() < 1e-14);
        for a in [1e-3, 0.1, 0.5, 1.0, 5.0, 30.0] {
            let lhs = normalizer_jsq(a).unwrap();
            let rhs = normalizer_jsq_split(a).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs,
                "alpha={a}: {lhs} vs {rhs}"
            );
            let left = 1.0 * (log_normalizer_jsq(a) - (a + 1.0) * 0.0).exp();
            assert!((density_jsq(2.0, a).unwrap() - left).abs() <= 1e-15 * left);
        }
        assert!(matches!(mean_jsq(0.0), Err(Error::Parameter(_))));
        assert!(matches!(density_iqf(0.5, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn iqf_mode() {
        let a = 0.8;
        let mode = 1.0 + 1.0 / a;
        let f = |n| density_iqf(n, a).unwrap();
        assert!(f(mode) > f(mode - 1e-4) && f(mode) > f(mode + 1e-4));
    }

    #[test]
    fn cdfs_match_quadrature() {
        for a in [0.2, 1.0, 4.0] {
            for (density, cdf) in [
                (
                    StationaryDensity::jsq(a).unwrap(),
                    cdf_jsq as fn(f64, f64) -> Result<f64>,
                ),
                (StationaryDensity::cq(a).unwrap(), cdf_cq),
                (StationaryDensity::iqf(a).unwrap(), cdf_iqf),
            ] {
                for x in [1.0, 1.3, 2.0, 2.7, 6.0] {
                    let q = density.cdf(x).unwrap();
                    assert!((q - cdf(x, a).unwrap()).abs() < 1e-12, "alpha={a} x={x}");
                }
            }
        }
    }

    #[test]
    fn reflected_drift_only_path() {
        let spec = DriftSpec::cq(unit(1.0));
        let mut s = RandomStream::new(1, 0);
        let opts = EmOptions {
            noise: Noise::Zero,
            ..Default::default()
        };
        let path = euler_maruyama_with(&spec, 2.0, 0.1, 1.0, &mut s, opts).unwrap();
        assert_eq!(path.steps, 10);
        assert!((path.values.last().unwrap() - 1.0).abs() < 1e-12);
        let path = euler_maruyama_with(&spec, 2.0, 0.1, 2.0, &mut s, opts).unwrap();
        assert_eq!(*path.values.last().unwrap(), 1.0);
    }

    #[test]
    fn em_rejects_bad_input() {
        let spec = DriftSpec::jsq(unit(1.0));
        let mut s = RandomStream::new(1, 0);
        assert!(euler_maruyama(&spec, 1.0, 0.1, 1.0, &mut s).is_err());
        assert!(euler_maruyama(&spec, 1.5, 0.0, 1.0, &mut s).is_err());
    }

    #[test]
    fn pod_tail_values() {
        assert_eq!(pod_meanfield_tail(0.5, 3, 2).unwrap(), 0.0078125);
        assert_eq!(pod_meanfield_tail(0.37, 1, 2).unwrap(), 0.37);
        assert_eq!(pod_meanfield_tail(0.9, 4, 2).unwrap(), 0.9f64.powi(15));
        assert_eq!(pod_meanfield_tail(0.9, 5, 2).unwrap(), 0.9f64.powi(31));
        // d = 3: exponent 1 + 3 + 9
        assert!((pod_meanfield_tail(0.8, 3, 3).unwrap() - 0.8f64.powi(13)).abs() < 1e-15);
        assert!(pod_meanfield_tail(1.0, 2, 2).is_err());
        assert!(pod_meanfield_tail(0.5, 2, 1).is_err());
    }

    #[test]
    fn ratio_sup_identity_and_limit() {
        let r = ratio_sup(LimitPolicy::Cq, LimitPolicy::Cq).unwrap();
        assert_eq!(r.sup_ratio, 1.0);
        let r = ratio_sup(LimitPolicy::Iqf, LimitPolicy::Cq).unwrap();
        assert!((r.alpha_star - RATIO_ALPHA_MIN).abs() < 1e-9);
        assert!(r.sup_ratio > 1.999);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&samples, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn numeric_density_recovers_closed_forms() {
        for a in [0.4, 1.0, 3.0] {
            for policy in [LimitPolicy::Jsq, LimitPolicy::Cq, LimitPolicy::Iqf] {
                let numeric = density_from_drift(&DriftSpec::new(policy, unit(a))).unwrap();
                let exact = policy.density(a).unwrap();
                for x in [1.001, 1.5, 2.0, 3.0, 5.0] {
                    let (u, v) = (numeric.pdf(x), exact.pdf(x));
                    assert!(
                        (u - v).abs() < 1e-7 * v.max(1e-3),
                        "{policy} a={a} x={x}: {u} vs {v}"
                    );
                }
                let m = numeric.mean().unwrap();
                let e = policy.mean(a).unwrap();
                assert!((m - e).abs() < 1e-8 * e, "{policy} a={a}: {m} vs {e}");
            }
        }
    }

    #[test]
    fn divergent_drift_is_reported() {
        let r = density_from_fn(|_| 0.5, 1.0, 1.0, 200.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn jsq_mean_reference_value() {
        assert!((mean_jsq(0.4).unwrap() - 3.76339).abs() < 1e-5);
    }
}
