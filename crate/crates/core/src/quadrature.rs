//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_SEGMENTS: usize = 5000;
const ROUNDOFF: f64 = 1e3 * f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Single 15-point Kronrod rule with the embedded 7-point Gauss error.
pub fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(&WGK).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Estimate {
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

#[derive(PartialEq)]
struct Segment {
    a: f64,
    b: f64,
    est: Estimate,
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.est.error.total_cmp(&other.est.error)
    }
}

/// Integrates `f` over `[a, b]` to `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    let first = kronrod15(&f, a, b);
    let mut heap = BinaryHeap::new();
    let (mut value, mut error) = (first.value, first.error);
    heap.push(Segment { a, b, est: first });
    // tolerances below the rounding floor of the sum cannot be met
    let floor = |v: f64| abs_tol.max(rel_tol * v.abs()).max(ROUNDOFF * v.abs());
    while error > floor(value) {
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::Domain(format!(
                "quadrature on [{a}, {b}] did not converge (error {error:e})"
            )));
        }
        let seg = heap.pop().expect("non-empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval exhausted at floating resolution; accept
            heap.push(Segment {
                est: Estimate {
                    value: seg.est.value,
                    error: 0.0,
                },
                ..seg
            });
            error = heap.iter().map(|s| s.est.error).sum();
            continue;
        }
        let left = kronrod15(&f, seg.a, mid);
        let right = kronrod15(&f, mid, seg.b);
        value += left.value + right.value - seg.est.value;
        error += left.error + right.error - seg.est.error;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            est: left,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            est: right,
        });
        if !value.is_finite() {
            return Err(Error::Domain(format!("non-finite integrand on [{a}, {b}]")));
        }
    }
    // resum to shed accumulated rounding from the running updates
    let value = heap.iter().map(|s| s.est.value).sum();
    let error = heap.iter().map(|s| s.est.error).sum();
    Ok(Estimate { value, error })
}

/// Integrates over consecutive intervals `points[i]..points[i+1]`.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let per = abs_tol / points.len().max(1) as f64;
    points
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], per, rel_tol).map(|e| e.value))
        .sum()
}
