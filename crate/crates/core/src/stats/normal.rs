use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// ln(√(2π))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this standardized cutoff the ratio φ/Φ is taken from the Mills-ratio
/// continued fraction instead of erfc.
const TAIL_SWITCH: f64 = -6.0;

/// Standardized cutoff and the matching ratio φ(α)/Φ(α).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationFactors {
    pub alpha: f64,
    pub lambda: f64,
}

impl TruncationFactors {
    /// αλ + λ², the variance reduction factor of an upper-truncated normal.
    pub fn variance_shrinkage(&self) -> f64 {
        self.alpha * self.lambda + self.lambda * self.lambda
    }
}

#[inline]
pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Mills ratio (1 − Φ(x)) / φ(x) for x ≥ 6 by backward evaluation of the
/// continued fraction 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
fn mills_ratio_tail(x: f64) -> f64 {
    debug_assert!(x >= -TAIL_SWITCH);
    let mut acc = x;
    for k in (1..=120).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

/// ln Φ(z), finite for every finite z.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z < TAIL_SWITCH {
        norm_logpdf(z) + mills_ratio_tail(-z).ln()
    } else if z > 6.0 {
        (-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else {
        norm_cdf(z).ln()
    }
}

/// φ(α)/Φ(α) for a standardized cutoff α.
pub fn std_normal_lambda(alpha: f64) -> Result<TruncationFactors> {
    if !alpha.is_finite() {
        return Err(Error::domain(format!("alpha must be finite, got {alpha}")));
    }
    Ok(TruncationFactors {
        alpha,
        lambda: lambda_unchecked(alpha),
    })
}

pub(crate) fn lambda_unchecked(alpha: f64) -> f64 {
    if alpha < TAIL_SWITCH {
        1.0 / mills_ratio_tail(-alpha)
    } else {
        (norm_logpdf(alpha) - log_norm_cdf(alpha)).exp()
    }
}

fn check_scales(sigma_meas: f64, sigma_total: f64) -> Result<()> {
    if !(sigma_meas >= 0.0 && sigma_total > 0.0) || !sigma_meas.is_finite() || !sigma_total.is_finite() {
        return Err(Error::domain(format!(
            "scales must be finite with sigma_meas >= 0 and sigma_total > 0 (got {sigma_meas}, {sigma_total})"
        )));
    }
    if sigma_meas > sigma_total {
        return Err(Error::domain(format!(
            "sigma_meas ({sigma_meas}) exceeds sigma_total ({sigma_total})"
        )));
    }
    Ok(())
}

/// Var(ε₁ | x₁ < c) for normal population and normal error, where α is the
/// cutoff standardized by the total scale.
pub fn truncated_error_variance(sigma_meas: f64, sigma_total: f64, alpha: f64) -> Result<f64> {
    check_scales(sigma_meas, sigma_total)?;
    let tf = std_normal_lambda(alpha)?;
    let s2 = sigma_meas * sigma_meas;
    Ok(s2 * (1.0 - s2 / (sigma_total * sigma_total) * tf.variance_shrinkage()))
}

/// Var(x₁ − x₂ | x₁ < c); always `truncated_error_variance + σ²_meas`.
pub fn conditional_delta_variance(sigma_meas: f64, sigma_total: f64, alpha: f64) -> Result<f64> {
    let truncated = truncated_error_variance(sigma_meas, sigma_total, alpha)?;
    Ok(truncated + sigma_meas * sigma_meas)
}

/// Log density of a bivariate normal with common mean, common marginal scale
/// and correlation `rho`.
pub fn bivariate_normal_logpdf(x1: f64, x2: f64, mu: f64, sigma_total: f64, rho: f64) -> Result<f64> {
    if !(sigma_total > 0.0) {
        return Err(Error::domain(format!("sigma_total must be positive, got {sigma_total}")));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::domain(format!("|rho| must be < 1, got {rho}")));
    }
    let z1 = (x1 - mu) / sigma_total;
    let z2 = (x2 - mu) / sigma_total;
    let one_m_r2 = 1.0 - rho * rho;
    let quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_m_r2;
    Ok(-2.0 * LN_SQRT_2PI - 2.0 * sigma_total.ln() - 0.5 * one_m_r2.ln() - 0.5 * quad)
}
