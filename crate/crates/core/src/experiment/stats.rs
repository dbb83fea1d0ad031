use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{param, Result};

/// Replication summary: mean and Student-t 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryStats {
    pub estimate: f64,
    /// `None` with a single replication.
    pub ci_halfwidth: Option<f64>,
    pub replications: usize,
    pub warmup_fraction: f64,
}

impl SummaryStats {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_halfwidth
            .is_some_and(|h| (value - self.estimate).abs() <= h)
    }

    pub fn interval(&self) -> Option<(f64, f64)> {
        self.ci_halfwidth
            .map(|h| (self.estimate - h, self.estimate + h))
    }
}

/// Batch means across independent replications: each replication's
/// post-warmup average is one batch.
pub fn batch_means(values: &[f64], warmup_fraction: f64) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(param("batch means need at least one replication"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(param(format!("non-finite replication estimate {v}")));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci_halfwidth = if n < 2 {
        None
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some(t_quantile_975(n - 1) * (var / n as f64).sqrt())
    };
    Ok(SummaryStats {
        estimate: mean,
        ci_halfwidth,
        replications: n,
        warmup_fraction,
    })
}

pub(crate) fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_replicates_have_zero_width() {
        let s = batch_means(&[2.5; 7], 0.2).unwrap();
        assert_eq!(s.estimate, 2.5);
        assert_eq!(s.ci_halfwidth, Some(0.0));
    }

    #[test]
    fn single_replicate_has_no_interval() {
        let s = batch_means(&[1.25], 0.2).unwrap();
        assert_eq!(s.estimate, 1.25);
        assert_eq!(s.ci_halfwidth, None);
        assert!(!s.covers(1.25));
        assert!(batch_means(&[], 0.2).is_err());
    }

    #[test]
    fn t_interval_value() {
        // mean 2, sd 1, n = 4: half-width 3.182446 / 2
        let s = batch_means(&[1.0, 2.0, 3.0, 2.0], 0.0).unwrap();
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((s.ci_halfwidth.unwrap() - 3.182_446_305_284_263 * sd / 2.0).abs() < 1e-9);
    }
}
