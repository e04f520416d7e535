use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use super::normal::{lambda_unchecked, log_norm_cdf, LN_SQRT_2PI};
use crate::error::{Error, Result};

/// Parameters of one of the four supported families.
///
/// Build values through [`MeasurementDensity`]'s constructors; the raw enum is
/// only exposed for inspection and serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensityKind {
    Normal {
        location: f64,
        scale: f64,
    },
    StudentT {
        location: f64,
        scale: f64,
        df: f64,
    },
    /// `weight` belongs to the narrower component (`scale1 <= scale2`).
    NormalMixture {
        location: f64,
        weight: f64,
        scale1: f64,
        scale2: f64,
    },
    SkewNormal {
        location: f64,
        scale: f64,
        shape: f64,
    },
}

/// A validated univariate density with its normalizing constant cached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityKind", into = "DensityKind")]
pub struct MeasurementDensity {
    kind: DensityKind,
    log_norm: f64,
}

impl From<MeasurementDensity> for DensityKind {
    fn from(d: MeasurementDensity) -> Self {
        d.kind
    }
}

impl TryFrom<DensityKind> for MeasurementDensity {
    type Error = Error;

    fn try_from(kind: DensityKind) -> Result<Self> {
        match kind {
            DensityKind::Normal { location, scale } => Self::normal(location, scale),
            DensityKind::StudentT { location, scale, df } => Self::student_t(location, scale, df),
            DensityKind::NormalMixture {
                location,
                weight,
                scale1,
                scale2,
            } => Self::normal_mixture(location, weight, scale1, scale2),
            DensityKind::SkewNormal { location, scale, shape } => Self::skew_normal(location, scale, shape),
        }
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite, got {v}")))
    }
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {v}")))
    }
}

impl MeasurementDensity {
    pub fn normal(location: f64, scale: f64) -> Result<Self> {
        check_finite("location", location)?;
        check_scale("scale", scale)?;
        Ok(Self {
            kind: DensityKind::Normal { location, scale },
            log_norm: -LN_SQRT_2PI - scale.ln(),
        })
    }

    /// Location-scale Student-t. Degrees of freedom must exceed 2 so that the
    /// variance exists.
    pub fn student_t(location: f64, scale: f64, df: f64) -> Result<Self> {
        check_finite("location", location)?;
        check_scale("scale", scale)?;
        if !(df > 2.0) || df.is_nan() {
            return Err(Error::domain(format!("Student-t df must exceed 2, got {df}")));
        }
        let log_norm = if df.is_infinite() {
            -LN_SQRT_2PI - scale.ln()
        } else {
            ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln() - scale.ln()
        };
        Ok(Self {
            kind: DensityKind::StudentT { location, scale, df },
            log_norm,
        })
    }

    /// Two-component normal mixture sharing one location. Components are
    /// relabelled so the first has the smaller scale; `weight` follows its
    /// component.
    pub fn normal_mixture(location: f64, weight: f64, scale1: f64, scale2: f64) -> Result<Self> {
        check_finite("location", location)?;
        check_scale("scale1", scale1)?;
        check_scale("scale2", scale2)?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::domain(format!("mixture weight must lie in [0, 1], got {weight}")));
        }
        let (weight, scale1, scale2) = if scale1 <= scale2 {
            (weight, scale1, scale2)
        } else {
            (1.0 - weight, scale2, scale1)
        };
        Ok(Self {
            kind: DensityKind::NormalMixture {
                location,
                weight,
                scale1,
                scale2,
            },
            log_norm: -LN_SQRT_2PI,
        })
    }

    /// Azzalini skew-normal with location ξ, scale ω and shape a:
    /// 2/ω · φ(z) · Φ(a z), z = (x − ξ)/ω.
    pub fn skew_normal(location: f64, scale: f64, shape: f64) -> Result<Self> {
        check_finite("location", location)?;
        check_scale("scale", scale)?;
        check_finite("shape", shape)?;
        Ok(Self {
            kind: DensityKind::SkewNormal { location, scale, shape },
            log_norm: std::f64::consts::LN_2 - LN_SQRT_2PI - scale.ln(),
        })
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn location(&self) -> f64 {
        match self.kind {
            DensityKind::Normal { location, .. }
            | DensityKind::StudentT { location, .. }
            | DensityKind::NormalMixture { location, .. }
            | DensityKind::SkewNormal { location, .. } => location,
        }
    }

    /// Same family and shape parameters, moved to a new location.
    pub fn with_location(&self, location: f64) -> Self {
        let mut out = *self;
        match &mut out.kind {
            DensityKind::Normal { location: l, .. }
            | DensityKind::StudentT { location: l, .. }
            | DensityKind::NormalMixture { location: l, .. }
            | DensityKind::SkewNormal { location: l, .. } => *l = location,
        }
        out
    }

    /// A scale that describes the width of the central part of the density.
    pub fn characteristic_scale(&self) -> f64 {
        match self.kind {
            DensityKind::Normal { scale, .. } | DensityKind::StudentT { scale, .. } => scale,
            DensityKind::SkewNormal { scale, shape, .. } => {
                let delta = shape / (1.0 + shape * shape).sqrt();
                scale * (1.0 - 2.0 * delta * delta / std::f64::consts::PI).sqrt()
            }
            DensityKind::NormalMixture {
                weight, scale1, scale2, ..
            } => (weight * scale1 * scale1 + (1.0 - weight) * scale2 * scale2).sqrt(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            DensityKind::SkewNormal { location, scale, shape } => {
                let delta = shape / (1.0 + shape * shape).sqrt();
                location + scale * delta * (2.0 / std::f64::consts::PI).sqrt()
            }
            _ => self.location(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            DensityKind::Normal { scale, .. } => scale * scale,
            DensityKind::StudentT { scale, df, .. } => {
                if df.is_infinite() {
                    scale * scale
                } else {
                    scale * scale * df / (df - 2.0)
                }
            }
            DensityKind::NormalMixture {
                weight, scale1, scale2, ..
            } => weight * scale1 * scale1 + (1.0 - weight) * scale2 * scale2,
            DensityKind::SkewNormal { scale, shape, .. } => {
                let delta = shape / (1.0 + shape * shape).sqrt();
                scale * scale * (1.0 - 2.0 * delta * delta / std::f64::consts::PI)
            }
        }
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        self.logpdf_derivs(x).0
    }

    /// Log density together with its first and second derivatives in `x`.
    pub fn logpdf_derivs(&self, x: f64) -> (f64, f64, f64) {
        match self.kind {
            DensityKind::Normal { location, scale } => {
                let z = (x - location) / scale;
                (self.log_norm - 0.5 * z * z, -z / scale, -1.0 / (scale * scale))
            }
            DensityKind::StudentT { location, scale, df } => {
                let u = x - location;
                if df.is_infinite() {
                    let z = u / scale;
                    return (self.log_norm - 0.5 * z * z, -z / scale, -1.0 / (scale * scale));
                }
                let ns2 = df * scale * scale;
                let denom = ns2 + u * u;
                let f = self.log_norm - 0.5 * (df + 1.0) * (u * u / ns2).ln_1p();
                let d1 = -(df + 1.0) * u / denom;
                let d2 = -(df + 1.0) * (ns2 - u * u) / (denom * denom);
                (f, d1, d2)
            }
            DensityKind::NormalMixture {
                location,
                weight,
                scale1,
                scale2,
            } => {
                let u = x - location;
                let comp = |w: f64, s: f64| -> f64 {
                    if w <= 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        w.ln() - s.ln() - 0.5 * (u / s) * (u / s)
                    }
                };
                let l1 = comp(weight, scale1);
                let l2 = comp(1.0 - weight, scale2);
                let m = l1.max(l2);
                let e1 = (l1 - m).exp();
                let e2 = (l2 - m).exp();
                let tot = e1 + e2;
                let (r1, r2) = (e1 / tot, e2 / tot);
                let (p1, p2) = (1.0 / (scale1 * scale1), 1.0 / (scale2 * scale2));
                let d1 = -u * (r1 * p1 + r2 * p2);
                let second = r1 * (u * u * p1 * p1 - p1) + r2 * (u * u * p2 * p2 - p2);
                (self.log_norm + m + tot.ln(), d1, second - d1 * d1)
            }
            DensityKind::SkewNormal { location, scale, shape } => {
                let z = (x - location) / scale;
                let az = shape * z;
                let lam = lambda_unchecked(az);
                let f = self.log_norm - 0.5 * z * z + log_norm_cdf(az);
                let d1 = (-z + shape * lam) / scale;
                let d2 = (-1.0 - shape * shape * lam * (az + lam)) / (scale * scale);
                (f, d1, d2)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            DensityKind::Normal { location, scale } => {
                let z: f64 = StandardNormal.sample(rng);
                location + scale * z
            }
            DensityKind::StudentT { location, scale, df } => {
                let t = if df.is_infinite() {
                    StandardNormal.sample(rng)
                } else {
                    StudentT::new(df).expect("df validated at construction").sample(rng)
                };
                location + scale * t
            }
            DensityKind::NormalMixture {
                location,
                weight,
                scale1,
                scale2,
            } => {
                let u: f64 = rng.random();
                let z: f64 = StandardNormal.sample(rng);
                let s = if u < weight { scale1 } else { scale2 };
                location + s * z
            }
            DensityKind::SkewNormal { location, scale, shape } => {
                let delta = shape / (1.0 + shape * shape).sqrt();
                let u0: f64 = StandardNormal.sample(rng);
                let u1: f64 = StandardNormal.sample(rng);
                location + scale * (delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1)
            }
        }
    }
}
