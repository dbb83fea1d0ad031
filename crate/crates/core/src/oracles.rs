//! Exact reference values for tests and cross-validation.
//!
//! Birth–death hitting probabilities, M/M/k stationary laws, M/M/1
//! excursion statistics and Poisson tail bounds. Each routine is closed
//! form or a direct recursion, independent of the simulators it checks.

use statrs::function::gamma::ln_gamma;

use crate::distributions::ServiceDistribution;
use crate::error::{param, Error, Result};
use crate::policies::Policy;
use crate::sim::{CtmcSimulator, SimConfig, SystemState};

/// Chain on `{0, ..., x}` with up rates `f(n)` for `n < x` and down rates
/// `g(n)` for `n >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct BirthDeathChain {
    /// `up[n] = f(n)`, `n = 0..x`.
    up: Vec<f64>,
    /// `down[n - 1] = g(n)`, `n = 1..=x`.
    down: Vec<f64>,
}

impl BirthDeathChain {
    pub fn new(up: Vec<f64>, down: Vec<f64>) -> Result<Self> {
        if up.is_empty() || up.len() != down.len() {
            return Err(param(format!(
                "need x >= 1 up and down rates, got {} and {}",
                up.len(),
                down.len()
            )));
        }
        if let Some(r) = up
            .iter()
            .chain(&down)
            .find(|r| !(**r > 0.0 && r.is_finite()))
        {
            return Err(param(format!("rates must be positive and finite, got {r}")));
        }
        Ok(BirthDeathChain { up, down })
    }

    pub fn constant(x: usize, up: f64, down: f64) -> Result<Self> {
        BirthDeathChain::new(vec![up; x], vec![down; x])
    }

    /// Top state `x`.
    pub fn size(&self) -> usize {
        self.up.len()
    }

    pub fn up_rate(&self, n: usize) -> f64 {
        self.up[n]
    }

    pub fn down_rate(&self, n: usize) -> f64 {
        self.down[n - 1]
    }

    /// `1 / sum_{n=1}^{x} prod_{m=1}^{n-1} g(m) / f(m)`.
    pub fn hitting_formula(&self) -> f64 {
        let mut sum = 0.0;
        let mut prod = 1.0;
        for n in 1..=self.size() {
            sum += prod;
            if n < self.size() {
                prod *= self.down_rate(n) / self.up_rate(n);
            }
        }
        1.0 / sum
    }

    /// Solves the first-step equations
    /// `(f(n) + g(n)) h(n) = f(n) h(n+1) + g(n) h(n-1)`, `h(0) = 0`,
    /// `h(x) = 1`, and returns `h(1)`.
    pub fn hitting_solve(&self) -> f64 {
        let x = self.size();
        if x == 1 {
            return 1.0;
        }
        // unknowns h(1..x-1); the top boundary moves to the right-hand side
        let m = x - 1;
        let mut rhs = vec![0.0; m];
        rhs[m - 1] = self.up_rate(x - 1);
        let mut h = self.thomas(&rhs);
        // refinement with residuals accumulated in double-double precision
        for _ in 0..3 {
            let residual: Vec<f64> = (0..m)
                .map(|i| {
                    let n = i + 1;
                    let (f, g) = (self.up_rate(n), self.down_rate(n));
                    let mut acc = Compensated::new(rhs[i]);
                    acc.sub_product(f, h[i]);
                    acc.sub_product(g, h[i]);
                    if i > 0 {
                        acc.sub_product(-g, h[i - 1]);
                    }
                    if i + 1 < m {
                        acc.sub_product(-f, h[i + 1]);
                    }
                    acc.value()
                })
                .collect();
            let delta = self.thomas(&residual);
            h.iter_mut().zip(&delta).for_each(|(v, d)| *v += d);
        }
        h[0]
    }

    /// Thomas algorithm for the interior tridiagonal system.
    fn thomas(&self, rhs: &[f64]) -> Vec<f64> {
        let m = rhs.len();
        let mut c_prime = vec![0.0; m];
        let mut d_prime = vec![0.0; m];
        for i in 0..m {
            let n = i + 1;
            let (f, g) = (self.up_rate(n), self.down_rate(n));
            let (c_prev, d_prev) = if i > 0 {
                (c_prime[i - 1], d_prime[i - 1])
            } else {
                (0.0, 0.0)
            };
            let lower = if i > 0 { -g } else { 0.0 };
            let denom = (f + g) - lower * c_prev;
            c_prime[i] = if i + 1 < m { -f / denom } else { 0.0 };
            d_prime[i] = (rhs[i] - lower * d_prev) / denom;
        }
        let mut h = vec![0.0; m];
        h[m - 1] = d_prime[m - 1];
        for i in (0..m - 1).rev() {
            h[i] = d_prime[i] - c_prime[i] * h[i + 1];
        }
        h
    }
}

/// Sum kept as an unevaluated pair `hi + lo`, with error-free products.
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn new(v: f64) -> Self {
        Compensated { hi: v, lo: 0.0 }
    }

    fn add(&mut self, v: f64) {
        let s = self.hi + v;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (v - bb);
        self.hi = s;
        self.lo += err;
    }

    fn sub_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let err = a.mul_add(b, -p);
        self.add(-p);
        self.lo -= err;
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Probability of reaching `x` before `0` from state `1`.
///
/// The closed form is cross-checked against the first-step linear system.
pub fn hitting_probability(chain: &BirthDeathChain) -> Result<f64> {
    let formula = chain.hitting_formula();
    let solved = chain.hitting_solve();
    if (formula - solved).abs() > 1e-12 {
        return Err(Error::InternalConsistency(format!(
            "hitting probability {formula} disagrees with linear solve {solved}"
        )));
    }
    Ok(formula)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmkStationary {
    /// `probs[n] = P(N = n)` for `n = 0..=cap`.
    pub probs: Vec<f64>,
    pub mean: f64,
    /// Mass beyond `cap` under the exact geometric tail.
    pub tail_mass: f64,
}

impl MmkStationary {
    /// `P(N >= n)`.
    pub fn ccdf(&self, n: usize) -> f64 {
        self.probs.iter().skip(n).sum::<f64>() + self.tail_mass
    }
}

/// Exact M/M/k stationary law on `{0, ..., cap}`, by the log-space
/// detailed-balance recursion `pi(n+1) / pi(n) = lambda / (mu min(n+1, k))`.
pub fn mmk_stationary(lambda: f64, mu: f64, k: usize, cap: usize) -> Result<MmkStationary> {
    if k == 0 {
        return Err(param("k must be positive"));
    }
    if !(lambda > 0.0 && mu > 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(param("lambda and mu must be positive"));
    }
    let rho = lambda / (k as f64 * mu);
    if rho >= 1.0 {
        return Err(Error::Unstable(format!(
            "M/M/k with lambda = {lambda}, k mu = {}",
            k as f64 * mu
        )));
    }
    if cap < k {
        return Err(param(format!("cap {cap} must be at least k = {k}")));
    }
    let mut log_w = Vec::with_capacity(cap + 1);
    log_w.push(0.0);
    for n in 1..=cap {
        let prev = log_w[n - 1];
        log_w.push(prev + lambda.ln() - (mu * n.min(k) as f64).ln());
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // geometric tail beyond cap folded into the normalizer
    let tail_w = (log_w[cap] - top).exp() * rho / (1.0 - rho);
    let total: f64 = log_w.iter().map(|w| (w - top).exp()).sum::<f64>() + tail_w;
    let probs: Vec<f64> = log_w.iter().map(|w| (w - top).exp() / total).collect();
    let tail_mass = tail_w / total;
    if tail_mass > 1e-12 {
        return Err(param(format!(
            "cap {cap} leaves tail mass {tail_mass:e} above 1e-12"
        )));
    }
    let mean = probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    Ok(MmkStationary {
        probs,
        mean,
        tail_mass,
    })
}

/// Smallest cap whose geometric tail mass is below 1e-13.
pub fn mmk_default_cap(lambda: f64, mu: f64, k: usize) -> usize {
    let rho = lambda / (k as f64 * mu);
    if !(rho > 0.0 && rho < 1.0) {
        return k;
    }
    k + ((1e-13 * (1.0 - rho)).ln() / rho.ln()).ceil() as usize + 1
}

/// M/M/1 cycle statistics with arrival rate `arrival` below `service`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExcursionStats {
    pub arrival: f64,
    pub service: f64,
}

impl ExcursionStats {
    pub fn new(arrival: f64, service: f64) -> Result<Self> {
        if !(arrival > 0.0 && arrival.is_finite()) {
            return Err(param(format!(
                "arrival rate must be positive, got {arrival}"
            )));
        }
        if !(service > arrival && service.is_finite()) {
            return Err(param(format!(
                "service rate {service} must exceed arrival rate {arrival}"
            )));
        }
        Ok(ExcursionStats { arrival, service })
    }

    /// Log moment generating function of the net increment rate,
    /// `a (e^t - 1) + b (e^-t - 1)`.
    pub fn phi(&self, theta: f64) -> f64 {
        self.arrival * theta.exp_m1() + self.service * (-theta).exp_m1()
    }

    pub fn phi_slope_at_zero(&self) -> f64 {
        self.arrival - self.service
    }

    /// Minimizer of `phi`: `log(b / a) / 2`.
    pub fn theta_star(&self) -> f64 {
        0.5 * (self.service / self.arrival).ln()
    }

    /// `sqrt(b/a) exp(-(sqrt b - sqrt a)^2 t)`, bounding `P(cycle >= t)`.
    pub fn tail_bound(&self, t: f64) -> f64 {
        let gap = self.service.sqrt() - self.arrival.sqrt();
        (self.service / self.arrival).sqrt() * (-gap * gap * t).exp()
    }

    /// Variant with the gap unsquared in the exponent.
    pub fn tail_bound_linear(&self, t: f64) -> f64 {
        let gap = self.service.sqrt() - self.arrival.sqrt();
        (self.service / self.arrival).sqrt() * (-gap * t).exp()
    }

    /// Constant `c` with `E[∫_cycle (Q - c) ds] = 0`: the stationary mean
    /// `a / (b - a)`.
    pub fn area_center(&self) -> f64 {
        self.arrival / (self.service - self.arrival)
    }

    /// The opposite-sign reading `a / (a - b)`, kept for comparison.
    pub fn area_center_flipped(&self) -> f64 {
        self.arrival / (self.arrival - self.service)
    }
}

/// One renewal cycle of the M/M/1 queue, from empty back to empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Excursion {
    pub length: f64,
    /// `∫ Q(s) ds` over the cycle.
    pub area: f64,
}

/// Simulates `count` consecutive cycles with the Markov-chain engine at
/// `k = 1`.
pub fn simulate_excursions(
    stats: &ExcursionStats,
    count: usize,
    seed: u64,
) -> Result<Vec<Excursion>> {
    let cfg = SimConfig::new(1, stats.arrival, Policy::CentralQueue)
        .service(ServiceDistribution::Exponential(stats.service))
        .seed(seed);
    let empty = SystemState {
        level_counts: vec![1],
        total_jobs: 0,
        central_buffer: 0,
    };
    let mut sim = CtmcSimulator::new(&cfg)?.with_state(empty)?;
    let mut out = Vec::with_capacity(count);
    let (mut start, mut area) = (0.0, 0.0);
    while out.len() < count {
        let (before, q) = (sim.time(), sim.total_jobs() as f64);
        sim.step()?;
        area += q * (sim.time() - before);
        if sim.total_jobs() == 0 {
            out.push(Excursion {
                length: sim.time() - start,
                area,
            });
            start = sim.time();
            area = 0.0;
        }
    }
    Ok(out)
}

/// Bound `e^(-x - mean)` on `P(Poisson(mean) >= x)`, valid for
/// `x >= mean * e^2`.
pub fn poisson_tail_bound(mean: f64, x: f64) -> Result<f64> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(param(format!("Poisson mean must be positive, got {mean}")));
    }
    if !(x >= mean * std::f64::consts::E.powi(2)) {
        return Err(Error::Domain(format!(
            "bound needs x >= mean * e^2 = {}, got {x}",
            mean * std::f64::consts::E.powi(2)
        )));
    }
    Ok((-x - mean).exp())
}

/// `P(Poisson(mean) >= x)` by summing the upper series. Accurate when
/// `x` is above the mean.
pub fn poisson_upper_tail(mean: f64, x: f64) -> Result<f64> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(param(format!("Poisson mean must be positive, got {mean}")));
    }
    let start = x.ceil().max(0.0);
    if start <= mean {
        // lower side is the short sum
        let below: f64 = (0..start as u64)
            .map(|n| log_pmf(mean, n as f64).exp())
            .sum();
        return Ok((1.0 - below).max(0.0));
    }
    let mut term = log_pmf(mean, start).exp();
    let mut sum = 0.0;
    let mut n = start;
    while term > sum * 1e-17 && term > 0.0 {
        sum += term;
        n += 1.0;
        term *= mean / n;
    }
    Ok(sum)
}

fn log_pmf(mean: f64, n: f64) -> f64 {
    n * mean.ln() - mean - ln_gamma(n + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamblers_ruin_and_geometric() {
        let c = BirthDeathChain::constant(4, 1.3, 1.3).unwrap();
        assert!((hitting_probability(&c).unwrap() - 0.25).abs() < 1e-15);
        let c = BirthDeathChain::constant(3, 2.0, 1.0).unwrap();
        assert!((hitting_probability(&c).unwrap() - 4.0 / 7.0).abs() < 1e-15);
        let c = BirthDeathChain::constant(1, 2.0, 1.0).unwrap();
        assert_eq!(hitting_probability(&c).unwrap(), 1.0);
    }

    #[test]
    fn chain_validation() {
        assert!(BirthDeathChain::new(vec![1.0], vec![]).is_err());
        assert!(BirthDeathChain::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn mm1_mean() {
        let s = mmk_stationary(0.5, 1.0, 1, mmk_default_cap(0.5, 1.0, 1)).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-12);
        assert!((s.probs.iter().sum::<f64>() + s.tail_mass - 1.0).abs() < 1e-12);
        assert!(matches!(
            mmk_stationary(1.0, 1.0, 1, 100),
            Err(Error::Unstable(_))
        ));
        assert!(mmk_stationary(0.9, 1.0, 1, 10).is_err());
    }

    #[test]
    fn large_k_does_not_overflow() {
        let (lambda, k) = (255.6, 256);
        let s = mmk_stationary(lambda, 1.0, k, mmk_default_cap(lambda, 1.0, k)).unwrap();
        assert!(s.mean.is_finite() && s.mean > 250.0);
    }

    #[test]
    fn excursion_constants() {
        let e = ExcursionStats::new(1.0, 4.0).unwrap();
        assert!((e.tail_bound(1.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(e.phi(0.0), 0.0);
        assert_eq!(e.phi_slope_at_zero(), -3.0);
        assert!((e.theta_star() - 2f64.ln()).abs() < 1e-15);
        assert!((e.area_center() - 1.0 / 3.0).abs() < 1e-15);
        assert!((e.area_center_flipped() + 1.0 / 3.0).abs() < 1e-15);
        assert!(ExcursionStats::new(2.0, 2.0).is_err());
    }

    #[test]
    fn excursion_simulation_is_deterministic() {
        let e = ExcursionStats::new(1.0, 2.0).unwrap();
        let a = simulate_excursions(&e, 100, 3).unwrap();
        assert_eq!(a, simulate_excursions(&e, 100, 3).unwrap());
        assert!(a.iter().all(|x| x.length > 0.0 && x.area >= 0.0));
    }

    #[test]
    fn poisson_examples() {
        let b = poisson_tail_bound(1.0, 10.0).unwrap();
        assert!((b - (-11.0f64).exp()).abs() < 1e-20);
        let exact = poisson_upper_tail(1.0, 10.0).unwrap();
        assert!((exact - 1.114_254e-7).abs() < 1e-12, "{exact}");
        assert!(exact <= b);
        let exact = poisson_upper_tail(0.1, 1.0).unwrap();
        assert!((exact - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
        assert!(exact <= poisson_tail_bound(0.1, 1.0).unwrap());
        assert!(matches!(
            poisson_tail_bound(1.0, 7.0),
            Err(Error::Domain(_))
        ));
    }
}
