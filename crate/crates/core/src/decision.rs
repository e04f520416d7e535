//! Eligibility probabilities for one person and misclassification rates of
//! screening strategies under a fitted model.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{measurement_variance_share, ModelId, PosteriorDraws, StratumModel};
use crate::error::{Error, Result};
use crate::simulate::{recheck_probability, RetestPolicy};
use crate::stats::{quantile_sorted, DensityKind, MeasurementDensity};

/// Fitted parameters of one stratum: a point estimate and, optionally,
/// posterior draws on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStratum {
    pub stratum: String,
    pub cutoff: f64,
    pub model: ModelId,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub draws: Vec<Vec<f64>>,
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

impl FittedStratum {
    pub fn point_model(&self) -> Result<StratumModel> {
        self.model.build(&self.theta)
    }

    pub fn draw_models(&self) -> Result<Vec<StratumModel>> {
        self.draws.iter().map(|d| self.model.build(d)).collect()
    }
}

/// The parameter file consumed by `decide`, `misclass` and the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub strata: Vec<FittedStratum>,
}

impl FittedModel {
    /// Posterior means of the normal-population, t-error model fitted to
    /// the donor data: male μ 15.74, σ²_pop 1.63, s 0.36, df 2.60 with
    /// cutoff 13; female 13.82, 1.13, 0.36, 3.28 with cutoff 12.5.
    pub fn reference() -> Self {
        let mk = |stratum: &str, cutoff: f64, mu: f64, var_pop: f64, s: f64, df: f64| FittedStratum {
            stratum: stratum.into(),
            cutoff,
            model: ModelId::B,
            theta: vec![mu, f64::sqrt(var_pop), s, df],
            draws: Vec::new(),
            converged: true,
        };
        Self {
            strata: vec![mk("M", 13.0, 15.74, 1.63, 0.36, 2.60), mk("F", 12.5, 13.82, 1.13, 0.36, 3.28)],
        }
    }

    pub fn stratum(&self, name: &str) -> Result<&FittedStratum> {
        self.strata
            .iter()
            .find(|s| s.stratum == name)
            .ok_or_else(|| Error::UnknownStratum(name.to_string()))
    }

    /// Posterior means as point estimates plus up to `max_draws` evenly
    /// thinned pooled draws per stratum.
    pub fn from_posterior(draws: &PosteriorDraws, max_draws: usize) -> Self {
        let d = draws.spec.dim();
        let total = draws.total_draws();
        let step = total.div_ceil(max_draws.max(1)).max(1);
        let strata = draws
            .strata
            .iter()
            .map(|layout| {
                let rows: Vec<Vec<f64>> = draws
                    .pooled()
                    .map(|row| row[layout.offset..layout.offset + d].to_vec())
                    .collect();
                let theta = (0..d)
                    .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                    .collect();
                let rhat_ok = (layout.offset..layout.offset + d).all(|j| draws.rhat[j] <= crate::bayes::RHAT_THRESHOLD);
                FittedStratum {
                    stratum: layout.stratum.clone(),
                    cutoff: layout.cutoff,
                    model: draws.spec.model,
                    theta,
                    draws: rows.into_iter().step_by(step).collect(),
                    converged: rhat_ok,
                }
            })
            .collect();
        Self { strata }
    }

    /// Per-stratum parameter summary served as the loaded model.
    pub fn summary(&self) -> Result<Vec<FittedSummary>> {
        self.strata
            .iter()
            .map(|s| {
                let names = s.model.params().iter().map(|p| p.name().to_string());
                let params = names
                    .enumerate()
                    .map(|(j, name)| {
                        let mut col: Vec<f64> = s.draws.iter().map(|d| d[j]).collect();
                        col.sort_by(f64::total_cmp);
                        let sd = (!col.is_empty()).then(|| {
                            let m = col.iter().sum::<f64>() / col.len() as f64;
                            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() as f64 - 1.0).max(1.0)).sqrt()
                        });
                        ParamEstimate {
                            name,
                            estimate: s.theta[j],
                            sd,
                            q025: (!col.is_empty()).then(|| quantile_sorted(&col, 0.025)),
                            q975: (!col.is_empty()).then(|| quantile_sorted(&col, 0.975)),
                        }
                    })
                    .collect();
                Ok(FittedSummary {
                    stratum: s.stratum.clone(),
                    cutoff: s.cutoff,
                    model: s.model,
                    params,
                    measurement_variance_share: measurement_variance_share(&s.point_model()?),
                    n_draws: s.draws.len(),
                    converged: s.converged,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    pub sd: Option<f64>,
    pub q025: Option<f64>,
    pub q975: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSummary {
    pub stratum: String,
    pub cutoff: f64,
    pub model: ModelId,
    pub params: Vec<ParamEstimate>,
    pub measurement_variance_share: Option<f64>,
    pub n_draws: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recommendation {
    Accept,
    Defer,
    /// The probability is inside the band where another measurement can
    /// change the decision.
    RetestInformative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterMode {
    PointEstimate,
    PosteriorDraws,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    /// Points of the uniform part of the grid.
    pub grid_points: usize,
    pub band_low: f64,
    pub band_high: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            grid_points: 2048,
            band_low: 0.2,
            band_high: 0.8,
        }
    }
}

impl DecisionConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_points < 16 {
            return Err(Error::domain("the decision grid needs at least 16 points"));
        }
        if !(0.0 <= self.band_low && self.band_low <= self.band_high && self.band_high <= 1.0) {
            return Err(Error::domain(format!(
                "recommendation band [{}, {}] must lie within [0, 1]",
                self.band_low, self.band_high
            )));
        }
        Ok(())
    }

    fn recommend(&self, p: f64) -> Recommendation {
        if p >= self.band_high {
            Recommendation::Accept
        } else if p <= self.band_low {
            Recommendation::Defer
        } else {
            Recommendation::RetestInformative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub stratum: String,
    pub x1: f64,
    #[serde(default)]
    pub x2: Option<f64>,
    /// Defaults to the stratum's fitted cutoff.
    #[serde(default)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionInputs {
    pub stratum: String,
    pub x1: f64,
    pub x2: Option<f64>,
    pub cutoff: f64,
}

/// Densities at one grid value. `prior` is the population density,
/// `likelihood` the product of error densities normalized over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub value: f64,
    pub prior: f64,
    pub likelihood: f64,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub inputs: DecisionInputs,
    /// Posterior probability that the true level is at least the cutoff.
    pub probability: f64,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
    pub recommendation: Recommendation,
    pub band: [f64; 2],
    pub parameter_mode: ParameterMode,
    pub n_draws: usize,
    pub grid: Vec<GridPoint>,
    pub warnings: Vec<String>,
}

fn error_scales(m: &MeasurementDensity) -> (f64, f64) {
    match *m.kind() {
        DensityKind::NormalMixture { scale1, scale2, .. } => (scale1.min(scale2), scale1.max(scale2)),
        DensityKind::SkewNormal { scale, .. } => (m.characteristic_scale(), scale),
        DensityKind::Normal { scale, .. } | DensityKind::StudentT { scale, .. } => (scale, scale),
    }
}

fn population_span(p: &MeasurementDensity) -> (f64, f64) {
    let w = match *p.kind() {
        DensityKind::SkewNormal { scale, .. } => scale,
        _ => p.variance().sqrt(),
    };
    (p.mean() - 10.0 * w, p.mean() + 10.0 * w)
}

/// Lattice `cutoff + i·h` covering the population and measurement spans, with
/// `h` set by the population span and `points`. When the error density is
/// narrower than the spacing, windows around the measurements are refined on
/// the sub-lattice of step `h / m`.
fn build_grid(models: &[StratumModel], xs: &[f64], cutoff: f64, points: usize) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut narrow = f64::INFINITY;
    let mut pop_width = f64::INFINITY;
    for m in models {
        let (a, b) = population_span(&m.population);
        let (n, w) = error_scales(&m.measurement);
        narrow = narrow.min(n);
        pop_width = pop_width.min(b - a);
        lo = lo.min(a);
        hi = hi.max(b);
        for &x in xs {
            lo = lo.min(x - 10.0 * w);
            hi = hi.max(x + 10.0 * w);
        }
    }
    let h = pop_width / (points - 1) as f64;
    let i_lo = ((lo - cutoff) / h).floor().min(0.0) as i64;
    let i_hi = ((hi - cutoff) / h).ceil().max(0.0) as i64;
    let mut grid: Vec<f64> = (i_lo..=i_hi).map(|i| cutoff + i as f64 * h).collect();
    if narrow < 8.0 * h {
        let m = (20.0 * h / narrow).ceil();
        let hd = h / m;
        let centre = xs.iter().sum::<f64>() / xs.len() as f64;
        for &c in xs.iter().chain(std::iter::once(&centre)) {
            let j_lo = ((c - 12.0 * narrow - cutoff) / hd).floor() as i64;
            let j_hi = ((c + 12.0 * narrow - cutoff) / hd).ceil() as i64;
            grid.extend((j_lo..=j_hi).map(|j| cutoff + j as f64 * hd));
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * h);
    grid
}

/// Integral over `[grid[0], ∞)` with the endpoint term of the Euler–Maclaurin
/// expansion when the first three nodes are evenly spaced.
fn tail_integral(grid: &[f64], f: &[f64]) -> f64 {
    let t = trapezoid(grid, f);
    if grid.len() < 3 {
        return t;
    }
    let h = grid[1] - grid[0];
    if ((grid[2] - grid[1]) - h).abs() > 1e-6 * h {
        return t;
    }
    let slope = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    t + h * h / 12.0 * slope
}

fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2)
        .zip(f.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

/// Normalized `exp(logf)` on the grid.
fn normalized(grid: &[f64], logf: &[f64]) -> Vec<f64> {
    let max = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut v: Vec<f64> = logf.iter().map(|l| (l - max).exp()).collect();
    let z = trapezoid(grid, &v);
    v.iter_mut().for_each(|x| *x /= z);
    v
}

struct SingleModel {
    prior: Vec<f64>,
    likelihood: Vec<f64>,
    posterior: Vec<f64>,
    probability: f64,
    mean: f64,
    second_moment: f64,
}

fn evaluate(model: &StratumModel, xs: &[f64], cutoff: f64, grid: &[f64]) -> SingleModel {
    let log_lik: Vec<f64> = grid
        .iter()
        .map(|&t| xs.iter().map(|&x| model.measurement.logpdf(x - t)).sum())
        .collect();
    let prior: Vec<f64> = grid.iter().map(|&t| model.population.logpdf(t).exp()).collect();
    let log_post: Vec<f64> = grid
        .iter()
        .zip(&log_lik)
        .map(|(&t, l)| model.population.logpdf(t) + l)
        .collect();
    let posterior = normalized(grid, &log_post);
    let k = grid.partition_point(|&t| t < cutoff);
    let probability = tail_integral(&grid[k..], &posterior[k..]).clamp(0.0, 1.0);
    let tp: Vec<f64> = grid.iter().zip(&posterior).map(|(t, p)| t * p).collect();
    let t2p: Vec<f64> = grid.iter().zip(&posterior).map(|(t, p)| t * t * p).collect();
    SingleModel {
        prior,
        likelihood: normalized(grid, &log_lik),
        posterior,
        probability,
        mean: trapezoid(grid, &tp),
        second_moment: trapezoid(grid, &t2p),
    }
}

/// Posterior of the true level given one or two measurements, averaged over
/// `models` (one entry for a point estimate, many for posterior draws).
pub fn eligibility_probability(
    inputs: DecisionInputs,
    models: &[StratumModel],
    mode: ParameterMode,
    config: &DecisionConfig,
) -> Result<DecisionReport> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::domain("no parameter sets supplied"));
    }
    let xs: Vec<f64> = std::iter::once(inputs.x1).chain(inputs.x2).collect();
    if xs.iter().any(|x| !x.is_finite()) || !inputs.cutoff.is_finite() {
        return Err(Error::domain("measurements and cutoff must be finite"));
    }
    let grid = build_grid(models, &xs, inputs.cutoff, config.grid_points);
    let parts: Vec<SingleModel> = models.par_iter().map(|m| evaluate(m, &xs, inputs.cutoff, &grid)).collect();
    let n = parts.len() as f64;
    let avg = |f: &dyn Fn(&SingleModel) -> &Vec<f64>| -> Vec<f64> {
        (0..grid.len()).map(|i| parts.iter().map(|p| f(p)[i]).sum::<f64>() / n).collect()
    };
    let prior = avg(&|p| &p.prior);
    let likelihood = avg(&|p| &p.likelihood);
    let posterior = avg(&|p| &p.posterior);
    let probability = parts.iter().map(|p| p.probability).sum::<f64>() / n;
    let mean = parts.iter().map(|p| p.mean).sum::<f64>() / n;
    let second = parts.iter().map(|p| p.second_moment).sum::<f64>() / n;
    Ok(DecisionReport {
        probability,
        posterior_mean: mean,
        posterior_sd: (second - mean * mean).max(0.0).sqrt(),
        recommendation: config.recommend(probability),
        band: [config.band_low, config.band_high],
        parameter_mode: mode,
        n_draws: models.len(),
        grid: grid
            .iter()
            .enumerate()
            .map(|(i, &value)| GridPoint {
                value,
                prior: prior[i],
                likelihood: likelihood[i],
                posterior: posterior[i],
            })
            .collect(),
        warnings: Vec::new(),
        inputs,
    })
}

/// Resolves the stratum and cutoff of a request against a fitted model.
/// Posterior draws are used when present and `use_draws` is set.
pub fn decide(fitted: &FittedModel, request: &DecisionRequest, use_draws: bool, config: &DecisionConfig) -> Result<DecisionReport> {
    let stratum = fitted.stratum(&request.stratum)?;
    let inputs = DecisionInputs {
        stratum: request.stratum.clone(),
        x1: request.x1,
        x2: request.x2,
        cutoff: request.cutoff.unwrap_or(stratum.cutoff),
    };
    let (models, mode) = if use_draws && !stratum.draws.is_empty() {
        (stratum.draw_models()?, ParameterMode::PosteriorDraws)
    } else {
        (vec![stratum.point_model()?], ParameterMode::PointEstimate)
    };
    let mut report = eligibility_probability(inputs, &models, mode, config)?;
    if !stratum.converged {
        report
            .warnings
            .push(format!("fit for stratum {} did not converge (rhat above threshold)", stratum.stratum));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Decide on the first measurement.
    Single,
    /// Retest below the cutoff and accept if either measurement reaches it.
    Repeat,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Single => "single",
            Strategy::Repeat => "repeat",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Strategy::Single),
            "repeat" => Ok(Strategy::Repeat),
            other => Err(Error::domain(format!("unknown strategy '{other}' (expected single or repeat)"))),
        }
    }
}

/// Rates in percent. FD: true level at or above the cutoff but deferred.
/// FB: true level below the cutoff but accepted. 1−PPV and 1−NPV are the
/// shares of deferrals and acceptances that are wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassRow {
    pub stratum: String,
    pub strategy: Strategy,
    pub fd_pct: f64,
    pub fb_pct: f64,
    pub one_minus_ppv_pct: f64,
    pub one_minus_npv_pct: f64,
    pub n_sim: usize,
}

const SIM_CHUNK: usize = 1 << 16;

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    false_defer: u64,
    false_bleed: u64,
    deferred: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            false_defer: self.false_defer + o.false_defer,
            false_bleed: self.false_bleed + o.false_bleed,
            deferred: self.deferred + o.deferred,
        }
    }
}

/// Simulates `n_sim` people from `model` and screens them with `strategy`.
/// Under `Repeat`, a first measurement below the cutoff is repeated with the
/// policy's recheck probability.
pub fn misclassification(
    model: &StratumModel,
    policy: &RetestPolicy,
    strategy: Strategy,
    n_sim: usize,
    seed: u64,
    stream: u64,
) -> Result<(f64, f64, f64, f64)> {
    if n_sim < 10_000 {
        return Err(Error::domain(format!("n_sim must be at least 10000, got {n_sim}")));
    }
    let c = policy.cutoff;
    let chunks = n_sim.div_ceil(SIM_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((stream << 32) | k as u64);
            let len = SIM_CHUNK.min(n_sim - k * SIM_CHUNK);
            let mut out = Counts::default();
            for _ in 0..len {
                let t = model.population.sample(&mut rng);
                let x1 = t + model.measurement.sample(&mut rng);
                let accept = if x1 >= c {
                    true
                } else {
                    match strategy {
                        Strategy::Single => false,
                        Strategy::Repeat => {
                            let p = recheck_probability(x1, policy).expect("policy validated");
                            let u: f64 = rng.random();
                            u < p && t + model.measurement.sample(&mut rng) >= c
                        }
                    }
                };
                let eligible = t >= c;
                out.false_defer += (eligible && !accept) as u64;
                out.false_bleed += (!eligible && accept) as u64;
                out.deferred += (!accept) as u64;
            }
            out
        })
        .reduce(Counts::default, |a, b| a + b);
    let n = n_sim as f64;
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    Ok((
        100.0 * counts.false_defer as f64 / n,
        100.0 * counts.false_bleed as f64 / n,
        ratio(counts.false_defer, counts.deferred),
        ratio(counts.false_bleed, n_sim as u64 - counts.deferred),
    ))
}

/// One row per stratum at the stratum's point estimate, with retesting
/// below the fitted cutoff at recheck rate `rate` (0 for always).
pub fn misclassification_table(
    fitted: &FittedModel,
    strategy: Strategy,
    rate: f64,
    n_sim: usize,
    seed: u64,
) -> Result<Vec<MisclassRow>> {
    fitted
        .strata
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let policy = RetestPolicy::new(s.cutoff, rate)?;
            let (fd, fb, ppv, npv) = misclassification(&s.point_model()?, &policy, strategy, n_sim, seed, i as u64)?;
            Ok(MisclassRow {
                stratum: s.stratum.clone(),
                strategy,
                fd_pct: fd,
                fb_pct: fb,
                one_minus_ppv_pct: ppv,
                one_minus_npv_pct: npv,
                n_sim,
            })
        })
        .collect()
}
