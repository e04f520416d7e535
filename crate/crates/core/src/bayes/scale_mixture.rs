//! Student-t errors written as normal scale mixtures.
//!
//! With w ~ Gamma(ν/2, rate ν/2), t_ν(0, s) is the mixture of N(0, s²/w).
//! Conditional on the weight the latent level integrates out in closed form
//! for normal and skew-normal populations, leaving a single integral over
//! y = ln w. In y the integrand is analytic in a strip of half-width π and
//! decays on both sides, so an equispaced trapezoid rule converges
//! geometrically. The grid y = kh does not depend on the record, so the
//! parameter-only parts are tabulated once per [`TMixture`].
//!
//! Pairs are integrated over the latent level itself with the same rule.

use libm::lgamma;

use super::marginal::LogSumExp;
use super::model::StratumModel;
use crate::stats::{log_norm_cdf, DensityKind, LN_SQRT_2PI};

/// Terms this far below the running maximum end a scan.
const DROP: f64 = 30.0;
/// Trapezoid step as a fraction of the log-weight scale.
const STEP: f64 = 0.45;
const MAX_STEPS: i64 = 20_000;
/// Step over the latent level as a fraction of the narrowest feature.
const PAIR_STEP: f64 = 0.85;

#[derive(Debug, Clone, Copy)]
enum Population {
    Normal { mu: f64, var: f64 },
    /// location, scale², δ = α/√(1+α²)
    Skew { xi: f64, omega2: f64, delta: f64 },
}

impl Population {
    /// log ∫ f_pop(T) φ_v(x − T) dT: the population convolved with N(0, v).
    #[inline]
    fn log_conv(self, x: f64, v: f64) -> f64 {
        match self {
            Population::Normal { mu, var } => {
                let tv = var + v;
                -0.5 * (x - mu) * (x - mu) / tv - 0.5 * tv.ln() - LN_SQRT_2PI
            }
            Population::Skew { xi, omega2, delta } => {
                let (c, inv_sd, shape) = skew_conv_terms(omega2, delta, v);
                let z = (x - xi) * inv_sd;
                c - 0.5 * z * z + log_norm_cdf(shape * z)
            }
        }
    }

    fn mean_var(self) -> (f64, f64) {
        match self {
            Population::Normal { mu, var } => (mu, var),
            Population::Skew { xi, omega2, delta } => {
                let b = (2.0 / std::f64::consts::PI).sqrt() * delta;
                (xi + omega2.sqrt() * b, omega2 * (1.0 - b * b))
            }
        }
    }
}

/// SN(ξ, ω, α) + N(0, v) = SN(ξ, ω', α') with ω'² = ω² + v and δ' = δω/ω'.
/// Returns (log-normalizer, 1/ω', α').
#[inline]
fn skew_conv_terms(omega2: f64, delta: f64, v: f64) -> (f64, f64, f64) {
    let o2 = omega2 + v;
    let d2 = delta * delta * omega2 / o2;
    let shape = (d2 / (1.0 - d2)).sqrt() * delta.signum();
    (std::f64::consts::LN_2 - 0.5 * o2.ln() - LN_SQRT_2PI, 1.0 / o2.sqrt(), shape)
}

/// Parameter-only quantities at one grid point.
#[derive(Debug, Clone, Copy)]
struct Node {
    /// log density of y plus the y-only part of the convolution
    c: f64,
    /// normal: −1/(2(σ²+v)); skew: 1/ω'
    a: f64,
    /// skew: α'
    b: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct TMixture {
    pop: Population,
    loc: f64,
    s2: f64,
    a: f64,
    log_mix_const: f64,
    h: f64,
    infinite_df: bool,
    k_min: i64,
    nodes: Vec<Node>,
}

impl TMixture {
    /// `None` unless the population is normal or skew-normal and the error
    /// is Student-t.
    pub(crate) fn new(model: &StratumModel) -> Option<Self> {
        let DensityKind::StudentT { location, scale, df } = *model.measurement.kind() else {
            return None;
        };
        let pop = match *model.population.kind() {
            DensityKind::Normal { location, scale } => Population::Normal {
                mu: location,
                var: scale * scale,
            },
            DensityKind::SkewNormal { location, scale, shape } => Population::Skew {
                xi: location,
                omega2: scale * scale,
                delta: shape / (1.0 + shape * shape).sqrt(),
            },
            _ => return None,
        };
        let a = 0.5 * df;
        let sd_log_w = if df.is_infinite() { 1.0 } else { (1.0 / a + 0.5 / (a * a)).sqrt().min(1.0) };
        let mut out = Self {
            pop,
            loc: location,
            s2: scale * scale,
            a,
            log_mix_const: if df.is_infinite() { 0.0 } else { a * a.ln() - lgamma(a) },
            h: STEP * sd_log_w,
            infinite_df: df.is_infinite(),
            k_min: 0,
            nodes: Vec::new(),
        };
        if !out.infinite_df {
            out.tabulate();
        }
        Some(out)
    }

    /// Log density of y = ln w.
    #[inline]
    fn log_mix(&self, y: f64) -> f64 {
        self.log_mix_const + self.a * (y - y.exp())
    }

    fn compute_node(&self, k: i64) -> Node {
        let y = k as f64 * self.h;
        let v = self.s2 * (-y).exp();
        let lm = self.log_mix(y);
        match self.pop {
            Population::Normal { var, .. } => {
                let tv = var + v;
                Node {
                    c: lm - 0.5 * tv.ln() - LN_SQRT_2PI,
                    a: -0.5 / tv,
                    b: 0.0,
                }
            }
            Population::Skew { omega2, delta, .. } => {
                let (c, inv_sd, shape) = skew_conv_terms(omega2, delta, v);
                Node {
                    c: lm + c,
                    a: inv_sd,
                    b: shape,
                }
            }
        }
    }

    /// Grid points where the mixing density is within 200 nats of its peak,
    /// capped at y ≥ −60.
    fn tabulate(&mut self) {
        let peak = self.log_mix(0.0);
        let mut k_max = 0i64;
        while k_max < MAX_STEPS && self.log_mix((k_max + 1) as f64 * self.h) > peak - 200.0 {
            k_max += 1;
        }
        let mut k_min = 0i64;
        while k_min > -MAX_STEPS {
            let y = (k_min - 1) as f64 * self.h;
            if y < -60.0 || self.log_mix(y) < peak - 200.0 {
                break;
            }
            k_min -= 1;
        }
        self.k_min = k_min;
        self.nodes = (k_min..=k_max).map(|k| self.compute_node(k)).collect();
    }

    #[inline]
    fn node(&self, k: i64) -> Node {
        let i = k - self.k_min;
        if i >= 0 && (i as usize) < self.nodes.len() {
            self.nodes[i as usize]
        } else {
            self.compute_node(k)
        }
    }

    #[inline]
    fn singleton_term(&self, x: f64, n: &Node) -> f64 {
        match self.pop {
            Population::Normal { mu, .. } => n.c + n.a * (x - mu) * (x - mu),
            Population::Skew { xi, .. } => {
                let z = (x - xi) * n.a;
                n.c - 0.5 * z * z + log_norm_cdf(n.b * z)
            }
        }
    }

    /// Left end of the region that may hold mass: weights small enough to
    /// explain a discrepancy of squared size `d2`.
    fn y_feature(&self, d2: f64) -> f64 {
        let (_, var) = self.pop.mean_var();
        ((self.s2 / (d2 + var)).ln() - 2.0).min(-1.0)
    }

    /// Trapezoid scan over k starting at 0. Returns the log integral and the
    /// index range holding non-negligible terms.
    fn scan(&self, y_feat: f64, f: impl Fn(i64) -> f64) -> (f64, i64, i64) {
        let mut acc = LogSumExp::new();
        let (mut lo, mut hi) = (0i64, 0i64);
        acc.push(f(0));
        for dir in [1i64, -1] {
            for step in 1..MAX_STEPS {
                let k = dir * step;
                let v = f(k);
                acc.push(v);
                let alive = v >= acc.max() - DROP;
                if alive {
                    lo = lo.min(k);
                    hi = hi.max(k);
                }
                let y = k as f64 * self.h;
                let past = if dir > 0 { y > 0.0 } else { y < y_feat };
                if past && !alive {
                    break;
                }
            }
        }
        (acc.value() + self.h.ln(), lo, hi)
    }

    pub(crate) fn log_marginal(&self, xs: &[f64]) -> Option<f64> {
        let (pm, _) = self.pop.mean_var();
        if self.infinite_df {
            return match xs {
                [x] => Some(self.pop.log_conv(x - self.loc, self.s2)),
                [x1, x2] => Some(pair_given_variances(self.pop, x1 - self.loc, x2 - self.loc, self.s2, self.s2)),
                _ => None,
            };
        }
        match xs {
            [x] => {
                let x = x - self.loc;
                let feat = self.y_feature((x - pm) * (x - pm));
                Some(self.scan(feat, |k| self.singleton_term(x, &self.node(k))).0)
            }
            [x1, x2] => Some(self.pair(x1 - self.loc, x2 - self.loc)),
            _ => None,
        }
    }

    /// Pairs integrate the latent level directly: ∫ f_pop(T) t(x₁−T) t(x₂−T) dT.
    /// The integrand is bounded by the population density, so it has light
    /// tails. The scan covers every feature before stopping.
    fn pair(&self, x1: f64, x2: f64) -> f64 {
        let nu = 2.0 * self.a;
        let s = self.s2.sqrt();
        let t_const = lgamma(self.a + 0.5) - lgamma(self.a) - 0.5 * (nu * std::f64::consts::PI).ln() - s.ln();
        let log_t = |z: f64| t_const - (self.a + 0.5) * (z * z / (nu * self.s2)).ln_1p();
        let (pop_width, log_pop): (f64, Box<dyn Fn(f64) -> f64>) = match self.pop {
            Population::Normal { mu, var } => {
                let c = -0.5 * var.ln() - LN_SQRT_2PI;
                (var.sqrt(), Box::new(move |t: f64| c - 0.5 * (t - mu) * (t - mu) / var))
            }
            Population::Skew { xi, omega2, delta } => {
                let omega = omega2.sqrt();
                let shape = delta / (1.0 - delta * delta).sqrt();
                let c = std::f64::consts::LN_2 - 0.5 * omega2.ln() - LN_SQRT_2PI;
                (
                    omega / (1.0 + shape * shape).sqrt(),
                    Box::new(move |t: f64| {
                        let z = (t - xi) / omega;
                        c - 0.5 * z * z + log_norm_cdf(shape * z)
                    }),
                )
            }
        };
        // curvatures add across the three factors
        let width = (pop_width.powi(-2) + 2.0 * (nu + 1.0) / (nu * self.s2)).sqrt().recip();
        let h = (PAIR_STEP * width).min(0.25 * s * nu.sqrt());
        let f = |k: i64| {
            let t = self.pop.mean_var().0 + k as f64 * h;
            log_pop(t) + log_t(x1 - t) + log_t(x2 - t)
        };
        let (pm, _) = self.pop.mean_var();
        let lo_feat = pm.min(x1).min(x2);
        let hi_feat = pm.max(x1).max(x2);
        let k_lo = ((lo_feat - pm) / h).floor() as i64;
        let k_hi = ((hi_feat - pm) / h).ceil() as i64;
        let mut acc = LogSumExp::new();
        for k in k_lo..=k_hi.min(k_lo + MAX_STEPS) {
            acc.push(f(k));
        }
        for dir in [-1i64, 1] {
            let mut k = if dir < 0 { k_lo } else { k_hi };
            for _ in 0..MAX_STEPS {
                k += dir;
                let v = f(k);
                acc.push(v);
                if v < acc.max() - DROP {
                    break;
                }
            }
        }
        acc.value() + h.ln()
    }
}

#[inline]
fn pair_given_variances(pop: Population, x1: f64, x2: f64, v1: f64, v2: f64) -> f64 {
    let vs = v1 + v2;
    let d = x1 - x2;
    let m = (x1 * v2 + x2 * v1) / vs;
    -0.5 * d * d / vs - 0.5 * vs.ln() - LN_SQRT_2PI + pop.log_conv(m, v1 * v2 / vs)
}
