use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{DensityKind, MeasurementDensity};

/// The four population/measurement family combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    /// normal population, normal error
    A,
    /// normal population, Student-t error
    B,
    /// normal population, two-component normal-mixture error
    C,
    /// skew-normal population, Student-t error
    D,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::A, ModelId::B, ModelId::C, ModelId::D];

    pub fn params(self) -> &'static [ParamKind] {
        use ParamKind::*;
        match self {
            ModelId::A => &[Mu, SigmaPop, SigmaMeas],
            ModelId::B => &[Mu, SigmaPop, SigmaMeas, Df],
            ModelId::C => &[Mu, SigmaPop, SigmaMeas1, SigmaMeas2, Weight],
            ModelId::D => &[MuLoc, MuScale, MuSkew, SigmaMeas, Df],
        }
    }

    pub fn dim(self) -> usize {
        self.params().len()
    }

    pub fn describe(self) -> &'static str {
        match self {
            ModelId::A => "normal-normal",
            ModelId::B => "normal-t",
            ModelId::C => "normal-mixture",
            ModelId::D => "skew-t",
        }
    }

    /// Natural-scale parameter vector to the pair of densities it describes.
    pub fn build(self, theta: &[f64]) -> Result<StratumModel> {
        if theta.len() != self.dim() {
            return Err(Error::domain(format!(
                "model {self} expects {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        let (population, measurement) = match self {
            ModelId::A => (
                MeasurementDensity::normal(theta[0], theta[1])?,
                MeasurementDensity::normal(0.0, theta[2])?,
            ),
            ModelId::B => (
                MeasurementDensity::normal(theta[0], theta[1])?,
                MeasurementDensity::student_t(0.0, theta[2], theta[3])?,
            ),
            ModelId::C => (
                MeasurementDensity::normal(theta[0], theta[1])?,
                MeasurementDensity::normal_mixture(0.0, theta[4], theta[2], theta[3])?,
            ),
            ModelId::D => (
                MeasurementDensity::skew_normal(theta[0], theta[1], theta[2])?,
                MeasurementDensity::student_t(0.0, theta[3], theta[4])?,
            ),
        };
        Ok(StratumModel { population, measurement })
    }

    /// Inverse of [`ModelId::build`] for densities of the matching families.
    pub fn extract(self, m: &StratumModel) -> Result<Vec<f64>> {
        let mismatch = || Error::domain(format!("densities do not match model {self}"));
        let pop = *m.population.kind();
        let meas = *m.measurement.kind();
        Ok(match (self, pop, meas) {
            (ModelId::A, DensityKind::Normal { location, scale }, DensityKind::Normal { scale: s, .. }) => {
                vec![location, scale, s]
            }
            (ModelId::B, DensityKind::Normal { location, scale }, DensityKind::StudentT { scale: s, df, .. }) => {
                vec![location, scale, s, df]
            }
            (
                ModelId::C,
                DensityKind::Normal { location, scale },
                DensityKind::NormalMixture {
                    weight, scale1, scale2, ..
                },
            ) => vec![location, scale, scale1, scale2, weight],
            (
                ModelId::D,
                DensityKind::SkewNormal { location, scale, shape },
                DensityKind::StudentT { scale: s, df, .. },
            ) => vec![location, scale, shape, s, df],
            _ => return Err(mismatch()),
        })
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::A => "a",
            ModelId::B => "b",
            ModelId::C => "c",
            ModelId::D => "d",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(ModelId::A),
            "b" => Ok(ModelId::B),
            "c" => Ok(ModelId::C),
            "d" => Ok(ModelId::D),
            other => Err(Error::domain(format!("unknown model id '{other}' (expected a, b, c or d)"))),
        }
    }
}

/// Latent-level density and zero-located error density for one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumModel {
    pub population: MeasurementDensity,
    pub measurement: MeasurementDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Mu,
    SigmaPop,
    SigmaMeas,
    Df,
    SigmaMeas1,
    SigmaMeas2,
    Weight,
    MuLoc,
    MuScale,
    MuSkew,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Mu => "mu",
            ParamKind::SigmaPop => "sigma_pop",
            ParamKind::SigmaMeas => "sigma_meas",
            ParamKind::Df => "df",
            ParamKind::SigmaMeas1 => "sigma_meas1",
            ParamKind::SigmaMeas2 => "sigma_meas2",
            ParamKind::Weight => "pi",
            ParamKind::MuLoc => "mu_loc",
            ParamKind::MuScale => "mu_scale",
            ParamKind::MuSkew => "mu_skew",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorFamily {
    Normal { mean: f64, sd: f64 },
    /// shape/rate parameterization
    Gamma { shape: f64, rate: f64 },
    Beta { a: f64, b: f64 },
}

/// A prior restricted to `[lower, upper]`. Densities are used unnormalized;
/// the truncation constant does not depend on the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    #[serde(flatten)]
    pub family: PriorFamily,
    pub lower: f64,
    pub upper: f64,
}

impl Prior {
    pub fn normal(mean: f64, sd: f64, lower: f64, upper: f64) -> Self {
        Self {
            family: PriorFamily::Normal { mean, sd },
            lower,
            upper,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn log_density(&self, v: f64) -> f64 {
        if !self.contains(v) {
            return f64::NEG_INFINITY;
        }
        match self.family {
            PriorFamily::Normal { mean, sd } => {
                let z = (v - mean) / sd;
                -0.5 * z * z - sd.ln()
            }
            PriorFamily::Gamma { shape, rate } => {
                if v <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (shape - 1.0) * v.ln() - rate * v
                }
            }
            PriorFamily::Beta { a, b } => {
                if v <= 0.0 || v >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    (a - 1.0) * v.ln() + (b - 1.0) * (-v).ln_1p()
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.family {
            PriorFamily::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            PriorFamily::Gamma { shape, rate } => shape > 0.0 && rate > 0.0,
            PriorFamily::Beta { a, b } => a > 0.0 && b > 0.0,
        };
        if !ok || !(self.lower < self.upper) {
            return Err(Error::domain(format!("invalid prior {self:?}")));
        }
        Ok(())
    }
}

/// One prior per parameter, in [`ModelId::params`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub priors: Vec<Prior>,
}

impl PriorSpec {
    /// Weakly informative defaults putting most prior-predictive mass in
    /// 12–18 g/dL.
    ///
    /// Scale caps are [0.2, 20] and df ∈ [2, 30]. Mixture scales are not capped
    /// at 2 and skew shape is allowed in [−15, 15]: the reference generating
    /// values reach 2.2 and ±5.
    pub fn defaults(model: ModelId) -> Self {
        let unbounded = (f64::NEG_INFINITY, f64::INFINITY);
        let scale = (0.2, 20.0);
        let df = (2.0, 30.0);
        let pick = |k: ParamKind| -> Prior {
            match (model, k) {
                (_, ParamKind::Mu) | (_, ParamKind::MuLoc) => Prior::normal(15.0, 2.0, unbounded.0, unbounded.1),
                (_, ParamKind::SigmaPop) => Prior::normal(0.0, 2.0, scale.0, scale.1),
                (ModelId::D, ParamKind::SigmaMeas) => Prior::normal(1.0, 2.0, 0.2, 2.0),
                (_, ParamKind::SigmaMeas) => Prior::normal(0.0, 2.0, scale.0, scale.1),
                (_, ParamKind::Df) => Prior {
                    family: PriorFamily::Gamma { shape: 2.0, rate: 0.1 },
                    lower: df.0,
                    upper: df.1,
                },
                (_, ParamKind::SigmaMeas1) => Prior::normal(0.0, 2.0, scale.0, scale.1),
                (_, ParamKind::SigmaMeas2) => Prior::normal(2.0, 2.0, scale.0, scale.1),
                (_, ParamKind::Weight) => Prior {
                    family: PriorFamily::Beta { a: 2.0, b: 2.0 },
                    lower: 0.0,
                    upper: 1.0,
                },
                (_, ParamKind::MuScale) => Prior::normal(1.0, 2.0, scale.0, scale.1),
                (_, ParamKind::MuSkew) => Prior::normal(0.0, 2.0, -15.0, 15.0),
            }
        };
        Self {
            priors: model.params().iter().map(|&k| pick(k)).collect(),
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        self.priors.iter().zip(theta).map(|(p, &v)| p.log_density(v)).sum()
    }
}

/// Model family plus priors. Strata share the prior specification but get
/// independent parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelId,
    pub priors: PriorSpec,
}

impl ModelSpec {
    pub fn new(model: ModelId) -> Self {
        Self {
            model,
            priors: PriorSpec::defaults(model),
        }
    }

    pub fn with_priors(model: ModelId, priors: PriorSpec) -> Result<Self> {
        if priors.priors.len() != model.dim() {
            return Err(Error::domain(format!(
                "model {model} needs {} priors, got {}",
                model.dim(),
                priors.priors.len()
            )));
        }
        for p in &priors.priors {
            p.validate()?;
        }
        let spec = Self { model, priors };
        if let Some(k) = spec.mixture_index() {
            let (a, b) = (spec.priors.priors[k], spec.priors.priors[k + 1]);
            if a.lower != b.lower || a.upper != b.upper {
                return Err(Error::domain("mixture scale priors must share bounds"));
            }
        }
        Ok(spec)
    }

    pub fn mixture_index(&self) -> Option<usize> {
        self.model.params().iter().position(|&k| k == ParamKind::SigmaMeas1)
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Natural parameters inside every prior support (and ordered mixture scales).
    pub fn in_bounds(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && self.priors.priors.iter().zip(theta).all(|(p, &v)| p.contains(v) && v.is_finite())
            && self.mixture_index().is_none_or(|k| theta[k] <= theta[k + 1])
    }

    /// Unconstrained vector to natural parameters and log |Jacobian|.
    pub fn constrain(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let params = self.model.params();
        let mut theta = vec![0.0; u.len()];
        let mut log_jac = 0.0;
        let mut k = 0;
        while k < u.len() {
            let prior = &self.priors.priors[k];
            match params[k] {
                ParamKind::SigmaMeas1 => {
                    // ordered pair: σ₁ = lo + e^{u₁}, σ₂ = σ₁ + e^{u₂}
                    theta[k] = prior.lower + u[k].exp();
                    theta[k + 1] = theta[k] + u[k + 1].exp();
                    log_jac += u[k] + u[k + 1];
                    k += 2;
                    continue;
                }
                _ => {
                    let (v, lj) = constrain_one(params[k], u[k], prior.lower, prior.upper);
                    theta[k] = v;
                    log_jac += lj;
                }
            }
            k += 1;
        }
        (theta, log_jac)
    }

    /// Natural parameters (assumed in bounds) to the unconstrained space.
    pub fn unconstrain(&self, theta: &[f64]) -> Vec<f64> {
        let params = self.model.params();
        let mut u = vec![0.0; theta.len()];
        let mut k = 0;
        while k < theta.len() {
            let prior = &self.priors.priors[k];
            if params[k] == ParamKind::SigmaMeas1 {
                u[k] = (theta[k] - prior.lower).max(1e-300).ln();
                u[k + 1] = (theta[k + 1] - theta[k]).max(1e-300).ln();
                k += 2;
                continue;
            }
            u[k] = unconstrain_one(params[k], theta[k], prior.lower, prior.upper);
            k += 1;
        }
        u
    }

    /// Parameter names with a stratum suffix, e.g. `sigma_pop[F]`.
    pub fn param_names(&self, stratum: &str) -> Vec<String> {
        self.model
            .params()
            .iter()
            .map(|k| format!("{}[{stratum}]", k.name()))
            .collect()
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy)]
enum Transform {
    Identity,
    /// `lower + e^u`; a finite upper cap acts through the prior support only
    LogAboveFloor,
    /// `lower + (upper − lower)·logistic(u)`
    ScaledLogit,
}

fn transform_for(kind: ParamKind, lower: f64, upper: f64) -> Transform {
    match kind {
        ParamKind::Mu | ParamKind::MuLoc if !lower.is_finite() && !upper.is_finite() => Transform::Identity,
        ParamKind::SigmaPop | ParamKind::SigmaMeas | ParamKind::MuScale => Transform::LogAboveFloor,
        _ if lower.is_finite() && upper.is_finite() => Transform::ScaledLogit,
        _ if lower.is_finite() => Transform::LogAboveFloor,
        _ => Transform::Identity,
    }
}

fn constrain_one(kind: ParamKind, u: f64, lower: f64, upper: f64) -> (f64, f64) {
    match transform_for(kind, lower, upper) {
        Transform::Identity => (u, 0.0),
        Transform::LogAboveFloor => (lower + u.exp(), u),
        Transform::ScaledLogit => {
            let p = logistic(u);
            let width = upper - lower;
            // log p(1 − p) = −|u| − 2 log(1 + e^{−|u|})
            let lj = width.ln() - u.abs() - 2.0 * (-u.abs()).exp().ln_1p();
            (lower + width * p, lj)
        }
    }
}

fn unconstrain_one(kind: ParamKind, v: f64, lower: f64, upper: f64) -> f64 {
    match transform_for(kind, lower, upper) {
        Transform::Identity => v,
        Transform::LogAboveFloor => (v - lower).max(1e-300).ln(),
        Transform::ScaledLogit => {
            let p = ((v - lower) / (upper - lower)).clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parse_and_display() {
        for m in ModelId::ALL {
            assert_eq!(m.to_string().parse::<ModelId>().unwrap(), m);
        }
        assert!("e".parse::<ModelId>().is_err());
    }

    #[test]
    fn build_extract_roundtrip() {
        let cases = [
            (ModelId::A, vec![14.8, 0.55, 0.55]),
            (ModelId::B, vec![14.8, 0.55, 0.5, 5.0]),
            (ModelId::C, vec![14.8, 0.55, 0.45, 2.0, 0.8]),
            (ModelId::D, vec![14.8, 0.55, 5.0, 0.55, 5.0]),
        ];
        for (m, theta) in cases {
            let sm = m.build(&theta).unwrap();
            assert_eq!(m.extract(&sm).unwrap(), theta);
        }
        assert!(ModelId::A.build(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn transforms_roundtrip_with_jacobian() {
        for m in ModelId::ALL {
            let spec = ModelSpec::new(m);
            let u: Vec<f64> = (0..m.dim()).map(|i| 0.3 * i as f64 - 0.4).collect();
            let (theta, lj) = spec.constrain(&u);
            let back = spec.unconstrain(&theta);
            for (a, b) in u.iter().zip(&back) {
                assert_relative_eq!(a, b, epsilon = 1e-9);
            }
            // log-Jacobian against a finite-difference determinant (triangular map)
            let h = 1e-6;
            let mut jac = vec![vec![0.0; m.dim()]; m.dim()];
            for j in 0..m.dim() {
                let mut up = u.clone();
                up[j] += h;
                let mut dn = u.clone();
                dn[j] -= h;
                let (tp, _) = spec.constrain(&up);
                let (tm, _) = spec.constrain(&dn);
                for i in 0..m.dim() {
                    jac[i][j] = (tp[i] - tm[i]) / (2.0 * h);
                }
            }
            // lower-triangular: determinant is the diagonal product
            let det: f64 = (0..m.dim()).map(|i| jac[i][i]).product();
            assert_relative_eq!(det.abs().ln(), lj, epsilon = 1e-6);
        }
    }

    #[test]
    fn mixture_scales_stay_ordered() {
        let spec = ModelSpec::new(ModelId::C);
        for a in [-3.0, 0.0, 2.0] {
            for b in [-4.0, 0.0, 1.0] {
                let (theta, _) = spec.constrain(&[15.0, 0.0, a, b, 0.0]);
                assert!(theta[2] < theta[3]);
            }
        }
    }

    #[test]
    fn df_maps_into_open_interval() {
        let spec = ModelSpec::new(ModelId::B);
        for u in [-30.0, -2.0, 0.0, 3.0, 30.0] {
            let (theta, _) = spec.constrain(&[15.0, 0.0, 0.0, u]);
            assert!(theta[3] >= 2.0 && theta[3] <= 30.0);
        }
        let (theta, _) = spec.constrain(&[15.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(theta[3], 16.0);
    }

    #[test]
    fn out_of_bounds_prior_is_minus_infinity() {
        let spec = ModelSpec::new(ModelId::A);
        assert_eq!(spec.priors.log_density(&[15.0, 0.1, 0.5]), f64::NEG_INFINITY);
        assert_eq!(spec.priors.log_density(&[15.0, 0.5, 25.0]), f64::NEG_INFINITY);
        assert!(spec.priors.log_density(&[15.0, 0.5, 0.5]).is_finite());
    }
}
