//! Variance estimators for FAT under cross-sectional independence.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// `(1/n) sum_i (u_i - mean)^2`, the per-unit variance.
    pub variance: f64,
    /// Standard error of the cross-sectional mean, `sqrt(variance / n)`.
    pub se: f64,
    pub n: usize,
}

fn centred_second_moment(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / n
}

/// Plain variance of the forecasted individual effects.
pub fn fat_variance(residuals: &[f64]) -> Result<VarianceEstimate> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let variance = centred_second_moment(residuals);
    Ok(VarianceEstimate {
        variance,
        se: (variance / n as f64).sqrt(),
        n,
    })
}

/// Variance accounting for an estimated common parameter.
///
/// Uses `u*_i = u_i - G' psi_i`, where `G` is the mean gradient of the
/// forecast with respect to the parameter and `psi_i` the unit's influence
/// value in the first-stage estimator.
pub fn mb_variance(residuals: &[f64], mean_gradient: &[f64], influence: &[Vec<f64>]) -> Result<VarianceEstimate> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    if influence.len() != n || influence.iter().any(|p| p.len() != mean_gradient.len()) {
        return Err(Error::InvalidConfig(
            "influence values must align with residuals and the gradient".into(),
        ));
    }
    let adjusted: Vec<f64> = residuals
        .iter()
        .zip(influence)
        .map(|(u, psi)| u - mean_gradient.iter().zip(psi).map(|(g, p)| g * p).sum::<f64>())
        .collect();
    let variance = centred_second_moment(&adjusted);
    Ok(VarianceEstimate {
        variance,
        se: (variance / n as f64).sqrt(),
        n,
    })
}

/// Two-sided normal critical value for confidence `level`.
pub fn normal_critical_value(level: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    std.inverse_cdf(0.5 + level / 2.0)
}
