use serde::{Deserialize, Serialize};

use super::model::StratumModel;
use super::scale_mixture::TMixture;
use crate::error::{Error, Result};
use crate::simulate::MeasurementPair;
use crate::stats::{bivariate_normal_logpdf, gauss_hermite, DensityKind, MeasurementDensity, QuadratureRule, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMode {
    /// Closed form when the population is normal and the error is normal or
    /// a normal mixture; Student-t errors go through their normal
    /// scale-mixture representation; anything else uses quadrature.
    #[default]
    Auto,
    /// Always use adaptive Gauss–Hermite in the latent level.
    Quadrature,
}

/// Integrates the latent true level out of a record's likelihood:
/// log ∫ f_pop(T) ∏ⱼ g(xⱼ − T) dT.
///
/// The generic path is adaptive Gauss–Hermite centred at the integrand's mode
/// with the Laplace scale. It is exact for normal layers but loses accuracy
/// when a heavy-tailed error peak sits on a much wider population density, so
/// Student-t errors are handled in [`QuadratureMode::Auto`] by writing the t as
/// a normal scale mixture: given the mixing weights the latent integral is
/// closed form, and the remaining one- or two-dimensional integral over log
/// weights is smooth enough for the trapezoid rule to converge geometrically.
///
/// When several local modes exist, each gets its own Gauss–Hermite rule and the
/// pieces are combined through a Gaussian-mixture importance density.
#[derive(Debug, Clone)]
pub struct Marginalizer {
    nodes: Vec<f64>,
    /// ln wᵢ + zᵢ², the weight after removing e^{−z²}
    log_weights: Vec<f64>,
    mode: QuadratureMode,
}

impl Marginalizer {
    pub fn new(order: usize, mode: QuadratureMode) -> Result<Self> {
        Ok(Self::from_rule(&gauss_hermite(order)?, mode))
    }

    pub fn from_rule(rule: &QuadratureRule, mode: QuadratureMode) -> Self {
        Self {
            nodes: rule.nodes.clone(),
            log_weights: rule.nodes.iter().zip(&rule.weights).map(|(&z, &w)| w.ln() + z * z).collect(),
            mode,
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn mode(&self) -> QuadratureMode {
        self.mode
    }

    /// Binds a parameter value; use this when evaluating many records under
    /// the same model.
    pub fn prepare<'a>(&'a self, model: &'a StratumModel) -> PreparedModel<'a> {
        let strategy = match self.mode {
            QuadratureMode::Auto if closed_form_applies(model) => Strategy::Closed,
            QuadratureMode::Auto => match TMixture::new(model) {
                Some(t) => Strategy::ScaleMixture(Box::new(t)),
                None => Strategy::Quadrature,
            },
            QuadratureMode::Quadrature => Strategy::Quadrature,
        };
        PreparedModel {
            marginalizer: self,
            model,
            strategy,
        }
    }

    /// Log marginal density of the observed measurements `xs` (one or two).
    pub fn log_marginal(&self, xs: &[f64], model: &StratumModel) -> Option<f64> {
        if self.mode == QuadratureMode::Auto {
            if let Some(v) = closed_form(xs, model) {
                return Some(v);
            }
            if let Some(t) = TMixture::new(model) {
                return t.log_marginal(xs).filter(|v| v.is_finite());
            }
        }
        self.quadrature(xs, model)
    }

    pub fn quadrature(&self, xs: &[f64], model: &StratumModel) -> Option<f64> {
        let integrand = Integrand { xs, model };
        let modes = integrand.modes();
        if modes.is_empty() {
            return None;
        }
        let value = if modes.len() == 1 {
            let (m, s) = modes[0];
            let root2s = std::f64::consts::SQRT_2 * s;
            let terms = self
                .nodes
                .iter()
                .zip(&self.log_weights)
                .map(|(&z, &lw)| lw + integrand.log_value(m + root2s * z));
            root2s.ln() + log_sum_exp(terms)
        } else {
            self.mixture_quadrature(&integrand, &modes)
        };
        value.is_finite().then_some(value)
    }

    fn mixture_quadrature(&self, integrand: &Integrand<'_>, modes: &[(f64, f64)]) -> f64 {
        // component weights ∝ Laplace mass at each mode
        let log_mass: Vec<f64> = modes
            .iter()
            .map(|&(m, s)| integrand.log_value(m) + s.ln())
            .collect();
        let norm = log_sum_exp(log_mass.iter().copied());
        let log_pi: Vec<f64> = log_mass.iter().map(|l| l - norm).collect();
        let log_q = |t: f64| {
            log_sum_exp(modes.iter().zip(&log_pi).map(|(&(m, s), &lp)| {
                let z = (t - m) / s;
                lp - 0.5 * z * z - s.ln() - LN_SQRT_2PI
            }))
        };
        let half_ln_pi = 0.5 * std::f64::consts::PI.ln();
        let parts = modes.iter().zip(&log_pi).map(|(&(m, s), &lp)| {
            let root2s = std::f64::consts::SQRT_2 * s;
            let inner = self.nodes.iter().zip(&self.log_weights).map(|(&z, &lw)| {
                let t = m + root2s * z;
                // back to the plain GH weight: E_N[f] = π^{-1/2} Σ wᵢ f(m + √2 s zᵢ)
                lw - z * z - half_ln_pi + integrand.log_value(t) - log_q(t)
            });
            lp + log_sum_exp(inner)
        });
        log_sum_exp(parts)
    }
}

/// Running log-sum-exp.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    acc: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            acc: 0.0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, x: f64) {
        if x.is_nan() {
            self.max = f64::NAN;
        } else if x <= self.max {
            self.acc += (x - self.max).exp();
        } else if x > f64::NEG_INFINITY {
            self.acc = if self.max.is_finite() { self.acc * (self.max - x).exp() + 1.0 } else { 1.0 };
            self.max = x;
        }
    }

    pub(crate) fn max(&self) -> f64 {
        self.max
    }

    pub(crate) fn value(&self) -> f64 {
        if self.max.is_finite() {
            self.max + self.acc.ln()
        } else {
            self.max
        }
    }
}

enum Strategy {
    Closed,
    ScaleMixture(Box<TMixture>),
    Quadrature,
}

/// A [`Marginalizer`] bound to one stratum model.
pub struct PreparedModel<'a> {
    marginalizer: &'a Marginalizer,
    model: &'a StratumModel,
    strategy: Strategy,
}

impl PreparedModel<'_> {
    pub fn log_marginal(&self, xs: &[f64]) -> Option<f64> {
        match &self.strategy {
            Strategy::Closed => closed_form(xs, self.model),
            Strategy::ScaleMixture(t) => t.log_marginal(xs).filter(|v| v.is_finite()),
            Strategy::Quadrature => self.marginalizer.quadrature(xs, self.model),
        }
    }
}

fn closed_form_applies(model: &StratumModel) -> bool {
    matches!(model.population.kind(), DensityKind::Normal { .. })
        && matches!(
            model.measurement.kind(),
            DensityKind::Normal { .. } | DensityKind::NormalMixture { .. }
        )
}

pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut l = LogSumExp::new();
    for x in it {
        l.push(x);
    }
    l.value()
}

/// Closed-form marginals for normal population with normal or normal-mixture
/// error.
fn closed_form(xs: &[f64], model: &StratumModel) -> Option<f64> {
    let (mu, sp) = match *model.population.kind() {
        DensityKind::Normal { location, scale } => (location, scale),
        _ => return None,
    };
    let components: [(f64, f64); 2] = match *model.measurement.kind() {
        DensityKind::Normal { scale, .. } => [(1.0, scale), (0.0, scale)],
        DensityKind::NormalMixture {
            weight, scale1, scale2, ..
        } => [(weight, scale1), (1.0 - weight, scale2)],
        _ => return None,
    };
    let vp = sp * sp;
    match xs {
        [x] => Some(log_sum_exp(components.iter().filter(|c| c.0 > 0.0).map(|&(w, s)| {
            let v = vp + s * s;
            w.ln() - 0.5 * (x - mu) * (x - mu) / v - 0.5 * v.ln() - LN_SQRT_2PI
        }))),
        [x1, x2] => {
            let mut terms = Vec::with_capacity(4);
            for &(w1, s1) in components.iter().filter(|c| c.0 > 0.0) {
                for &(w2, s2) in components.iter().filter(|c| c.0 > 0.0) {
                    terms.push(w1.ln() + w2.ln() + bivariate_unequal(*x1, *x2, mu, vp, s1 * s1, s2 * s2));
                }
            }
            Some(log_sum_exp(terms))
        }
        _ => None,
    }
}

/// Bivariate normal with covariance [[vp + v1, vp], [vp, vp + v2]].
fn bivariate_unequal(x1: f64, x2: f64, mu: f64, vp: f64, v1: f64, v2: f64) -> f64 {
    if v1 == v2 {
        let st = (vp + v1).sqrt();
        return bivariate_normal_logpdf(x1, x2, mu, st, vp / (vp + v1)).unwrap_or(f64::NEG_INFINITY);
    }
    let (a, b, c) = (vp + v1, vp, vp + v2);
    let det = a * c - b * b;
    let (d1, d2) = (x1 - mu, x2 - mu);
    let quad = (c * d1 * d1 - 2.0 * b * d1 * d2 + a * d2 * d2) / det;
    -2.0 * LN_SQRT_2PI - 0.5 * det.ln() - 0.5 * quad
}

struct Integrand<'a> {
    xs: &'a [f64],
    model: &'a StratumModel,
}

impl Integrand<'_> {
    fn log_value(&self, t: f64) -> f64 {
        let mut v = self.model.population.logpdf(t);
        for &x in self.xs {
            v += self.model.measurement.logpdf(x - t);
        }
        v
    }

    fn derivs(&self, t: f64) -> (f64, f64, f64) {
        let (mut f, mut d1, mut d2) = self.model.population.logpdf_derivs(t);
        for &x in self.xs {
            let (g, g1, g2) = self.model.measurement.logpdf_derivs(x - t);
            f += g;
            d1 -= g1;
            d2 += g2;
        }
        (f, d1, d2)
    }

    fn pop_center_scale(&self) -> (f64, f64) {
        (self.model.population.mean(), self.model.population.variance().sqrt())
    }

    fn error_scale(&self) -> f64 {
        match *self.model.measurement.kind() {
            DensityKind::NormalMixture { scale1, .. } => scale1,
            _ => self.model.measurement.characteristic_scale(),
        }
    }

    /// Local maxima as (location, Laplace scale), deduplicated.
    fn modes(&self) -> Vec<(f64, f64)> {
        let (pm, ps) = self.pop_center_scale();
        let es = self.error_scale();
        let (wp, wm) = (1.0 / (ps * ps), 1.0 / (es * es));
        let start = (wp * pm + wm * self.xs.iter().sum::<f64>()) / (wp + wm * self.xs.len() as f64);
        let width = 1.0 / (wp + wm * self.xs.len() as f64).sqrt();

        let multimodal_possible = self.xs.len() > 1
            && !matches!(self.model.measurement.kind(), DensityKind::Normal { .. });
        let mut starts = vec![start];
        if multimodal_possible {
            starts.extend(self.xs.iter().copied());
        }
        let mut found: Vec<(f64, f64)> = Vec::with_capacity(starts.len());
        for s0 in starts {
            let Some(m) = self.maximize(s0, width) else { continue };
            let (_, _, d2) = self.derivs(m);
            let scale = if d2 < 0.0 { 1.0 / (-d2).sqrt() } else { width };
            if found.iter().all(|&(o, os)| (o - m).abs() > 1e-3 * os.min(scale)) {
                found.push((m, scale));
            }
        }
        if found.len() > 1 {
            // drop modes that carry negligible mass
            let best = found.iter().map(|&(m, s)| self.log_value(m) + s.ln()).fold(f64::NEG_INFINITY, f64::max);
            found.retain(|&(m, s)| self.log_value(m) + s.ln() > best - 40.0);
        }
        found
    }

    /// Safeguarded Newton ascent from `t0`.
    fn maximize(&self, t0: f64, width: f64) -> Option<f64> {
        let mut t = t0;
        let (mut f, mut d1, mut d2) = self.derivs(t);
        if !f.is_finite() {
            return None;
        }
        let max_step = 4.0 * width;
        for _ in 0..100 {
            let mut step = if d2 < 0.0 { -d1 / d2 } else { d1.signum() * width };
            step = step.clamp(-max_step, max_step);
            let mut accepted = false;
            for _ in 0..40 {
                let cand = t + step;
                let (cf, c1, c2) = self.derivs(cand);
                if cf.is_finite() && cf >= f - 1e-12 * f.abs().max(1.0) {
                    t = cand;
                    f = cf;
                    d1 = c1;
                    d2 = c2;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step.abs() <= 1e-12 * width.max(t.abs() * 1e-3) {
                break;
            }
        }
        t.is_finite().then_some(t)
    }
}

/// Log marginal likelihood of one record under a stratum model.
pub fn record_marginal_loglik(record: &MeasurementPair, model: &StratumModel, marginalizer: &Marginalizer) -> Result<f64> {
    let buf;
    let xs: &[f64] = match record.x2 {
        Some(x2) => {
            buf = [record.x1, x2];
            &buf
        }
        None => std::slice::from_ref(&record.x1),
    };
    marginalizer.log_marginal(xs, model).ok_or_else(|| Error::Evaluation {
        record_id: record.id,
        reason: "non-finite marginal likelihood (mode finding failed)".into(),
    })
}

/// Used by tests and by the Monte Carlo predictive path: error density at a
/// fixed latent level.
pub(crate) fn log_likelihood_given_truth(xs: &[f64], truth: f64, measurement: &MeasurementDensity) -> f64 {
    xs.iter().map(|&x| measurement.logpdf(x - truth)).sum()
}
