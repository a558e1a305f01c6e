//! Gaussian quantiles and empirical percentiles.

use statrs::function::erf::erfc_inv;

use crate::error::{BmdError, Result};

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(BmdError::InvalidArgument(format!(
            "normal quantile needs 0 < p < 1 (got {p})"
        )));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

/// Upper quantile `q` of χ²₁ with `P(χ²₁ < q) = level`, via `q = Φ⁻¹((1+level)/2)²`.
pub fn chi2_1_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(BmdError::InvalidArgument(format!(
            "confidence level must lie in (0, 1) (got {level})"
        )));
    }
    let z = normal_quantile(0.5 * (1.0 + level))?;
    Ok(z * z)
}

/// Linear-interpolation percentile between order statistics (type 7).
/// `prob` in `[0, 1]`; `values` need not be sorted.
pub fn percentile(values: &[f64], prob: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&prob) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(crate::splines::quantile_sorted(&sorted, prob))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}
