//! Probability primitives shared by the estimators, the sampler and the
//! decision layer. Everything here is pure.

mod density;
mod normal;
mod quadrature;

pub use density::{DensityKind, MeasurementDensity};
pub use normal::{
    bivariate_normal_logpdf, conditional_delta_variance, log_norm_cdf, norm_cdf, norm_logpdf,
    std_normal_lambda, truncated_error_variance, TruncationFactors, LN_SQRT_2PI,
};
pub use quadrature::{gauss_hermite, QuadratureRule};

/// Linear-interpolation quantile (type 7) of sorted data; NaN when empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
