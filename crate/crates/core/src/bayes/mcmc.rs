use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{effective_sample_size, split_rhat};
use super::marginal::{Marginalizer, QuadratureMode};
use super::model::{ModelId, ModelSpec, ParamKind};
use super::optimize::{cholesky, fd_hessian, nelder_mead, spd_inverse};
use super::posterior::{StratumData, StratumPosterior};
use crate::error::{Error, Result};

const TARGET_ACCEPT: f64 = 0.234;
pub const RHAT_THRESHOLD: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Metropolis steps per retained draw.
    pub thin: usize,
    pub seed: u64,
    pub quad_nodes: usize,
    pub quad_mode: QuadratureMode,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            iters: 1000,
            thin: 1,
            seed: 1,
            quad_nodes: 32,
            quad_mode: QuadratureMode::Auto,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::domain("at least 2 chains are needed for convergence diagnostics"));
        }
        if self.iters < 4 || self.thin == 0 {
            return Err(Error::domain("iters must be >= 4 and thin >= 1"));
        }
        Ok(())
    }
}

/// Where a stratum's parameter block sits inside a joint draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumLayout {
    pub stratum: String,
    pub cutoff: f64,
    pub offset: usize,
}

/// Post-warmup draws of one chain on the natural scale; each row is a joint
/// draw of all strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub draws: Vec<Vec<f64>>,
    /// acceptance rate per stratum block
    pub acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub strata: Vec<StratumLayout>,
    pub param_names: Vec<String>,
    pub config: McmcConfig,
    pub chains: Vec<ChainDraws>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub converged: bool,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.draws.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn stratum_index(&self, stratum: &str) -> Option<usize> {
        self.strata.iter().position(|s| s.stratum == stratum)
    }

    /// All joint draws, chains concatenated.
    pub fn pooled(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains.iter().flat_map(|c| c.draws.iter().map(Vec::as_slice))
    }

    /// Parameter block of one stratum for every pooled draw.
    pub fn stratum_draws(&self, idx: usize) -> Vec<&[f64]> {
        let d = self.spec.dim();
        let off = self.strata[idx].offset;
        self.pooled().map(|row| &row[off..off + d]).collect()
    }

    /// `s` draws spread evenly over the pooled sample (all of them if fewer).
    pub fn thinned(&self, s: usize) -> Vec<&[f64]> {
        let all: Vec<&[f64]> = self.pooled().collect();
        if s == 0 || s >= all.len() {
            return all;
        }
        (0..s).map(|i| all[i * all.len() / s]).collect()
    }

    /// Per-chain trace of parameter column `p`.
    pub fn column(&self, p: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|r| r[p]).collect()).collect()
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Output of [`adaptive_metropolis`] on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct RwmChain {
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub acceptance: f64,
}

const PROPOSAL_DF: f64 = 5.0;
/// Inflation of the independence proposal relative to the fitted covariance.
const INDEPENDENCE_INFLATION: f64 = 1.2;

fn forward_solve(l: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    let d = r.len();
    let mut z = vec![0.0; d];
    for i in 0..d {
        z[i] = (r[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    z
}

/// Multivariate t proposal with location `center` and scale factor `chol`.
struct IndependenceProposal {
    center: Vec<f64>,
    chol: Vec<Vec<f64>>,
}

impl IndependenceProposal {
    fn log_q(&self, u: &[f64]) -> f64 {
        let r: Vec<f64> = u.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let q: f64 = forward_solve(&self.chol, &r).iter().map(|z| z * z).sum();
        -0.5 * (PROPOSAL_DF + u.len() as f64) * (q / PROPOSAL_DF).ln_1p()
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.center.len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let chi2: f64 = rand_distr::ChiSquared::new(PROPOSAL_DF).expect("positive df").sample(rng);
        let k = (PROPOSAL_DF / chi2).sqrt();
        (0..d)
            .map(|i| self.center[i] + k * (0..=i).map(|j| self.chol[i][j] * z[j]).sum::<f64>())
            .collect()
    }
}

/// Adaptive Metropolis on an unconstrained log density.
///
/// Each step is, with equal probability, a random-walk move
/// `u + exp(log_scale)·L z` or an independence move from a multivariate t
/// centred at `center`. During warmup the random-walk scale follows a
/// Robbins–Monro recursion toward 23.4% acceptance, and both proposals are
/// refitted to the warmup history at 40%, 60% and 80% of the warmup. After
/// warmup the kernel is fixed.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_metropolis<F: Fn(&[f64]) -> f64, R: Rng>(
    logp: F,
    init: &[f64],
    center: &[f64],
    init_cov: &[Vec<f64>],
    warmup: usize,
    iters: usize,
    thin: usize,
    rng: &mut R,
) -> Result<RwmChain> {
    let d = init.len();
    let mut u = init.to_vec();
    let mut lp = logp(&u);
    if !lp.is_finite() {
        return Err(Error::domain("initial point has zero posterior density"));
    }
    let mut chol = cholesky(init_cov).ok_or_else(|| Error::domain("initial proposal covariance is not positive definite"))?;
    let mut indep = IndependenceProposal {
        center: center.to_vec(),
        chol: chol.iter().map(|r| r.iter().map(|v| v * INDEPENDENCE_INFLATION).collect()).collect(),
    };
    let base_scale = (2.38 / (d as f64).sqrt()).ln();
    let mut log_scale = base_scale;

    let checkpoints = [warmup * 2 / 5, warmup * 3 / 5, warmup * 4 / 5];
    let history_start = warmup / 5;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![vec![0.0; d]; d];
    let mut count = 0usize;

    // returns (was random walk, acceptance probability)
    let step = |u: &mut Vec<f64>,
                lp: &mut f64,
                chol: &[Vec<f64>],
                indep: &IndependenceProposal,
                scale: f64,
                rng: &mut R|
     -> (bool, f64) {
        let random_walk = rng.random::<bool>();
        let (prop, log_correction) = if random_walk {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let prop: Vec<f64> = (0..d)
                .map(|i| u[i] + scale * (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
                .collect();
            (prop, 0.0)
        } else {
            let prop = indep.draw(rng);
            let corr = indep.log_q(u) - indep.log_q(&prop);
            (prop, corr)
        };
        let lp_new = logp(&prop);
        let log_ratio = lp_new - *lp + log_correction;
        let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
        if rng.random::<f64>() < accept_prob {
            u.copy_from_slice(&prop);
            *lp = lp_new;
        }
        (random_walk, accept_prob)
    };

    let mut rw_steps = 0usize;
    for t in 0..warmup {
        let (rw, a) = step(&mut u, &mut lp, &chol, &indep, log_scale.exp(), rng);
        if rw {
            rw_steps += 1;
            let gamma = (rw_steps as f64 + 10.0).powf(-0.6);
            log_scale = (log_scale + gamma * (a - TARGET_ACCEPT)).clamp(base_scale - 8.0, base_scale + 4.0);
        }
        if t >= history_start {
            count += 1;
            let delta: Vec<f64> = u.iter().zip(&mean).map(|(x, m)| x - m).collect();
            for i in 0..d {
                mean[i] += delta[i] / count as f64;
            }
            for i in 0..d {
                for j in 0..d {
                    m2[i][j] += delta[i] * (u[j] - mean[j]);
                }
            }
        }
        if checkpoints.contains(&(t + 1)) && count > 2 * d + 5 {
            // shrink toward a small ridge so a stuck stretch cannot collapse L
            let n = count as f64;
            let cov: Vec<Vec<f64>> = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| (m2[i][j] + if i == j { 1e-3 } else { 0.0 }) / (n - 1.0 + 10.0))
                        .collect()
                })
                .collect();
            if let Some(l) = cholesky(&cov) {
                indep = IndependenceProposal {
                    center: mean.clone(),
                    chol: l.iter().map(|r| r.iter().map(|v| v * INDEPENDENCE_INFLATION).collect()).collect(),
                };
                chol = l;
                log_scale = base_scale;
            }
        }
    }

    let scale = log_scale.exp();
    let mut draws = Vec::with_capacity(iters);
    let mut log_density = Vec::with_capacity(iters);
    let mut accept_sum = 0.0;
    for _ in 0..iters {
        for _ in 0..thin {
            accept_sum += step(&mut u, &mut lp, &chol, &indep, scale, rng).1;
        }
        draws.push(u.clone());
        log_density.push(lp);
    }
    Ok(RwmChain {
        draws,
        log_density,
        acceptance: accept_sum / (iters * thin) as f64,
    })
}

/// Starting values from data moments, clamped into the prior support. Skewed
/// populations get one start per skew direction, since the likelihood can
/// have a local mode on the wrong side.
fn initial_guesses(spec: &ModelSpec, data: &StratumData) -> Vec<Vec<f64>> {
    let n = data.records.len().max(1) as f64;
    let mean = data.records.iter().map(|r| r.x1).sum::<f64>() / n;
    let var = data.records.iter().map(|r| (r.x1 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let diffs: Vec<f64> = data.records.iter().filter_map(|r| r.x2.map(|x2| x2 - r.x1)).collect();
    let sm = if diffs.len() >= 3 {
        let dm = diffs.iter().sum::<f64>() / diffs.len() as f64;
        (diffs.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64 / 2.0).sqrt()
    } else {
        0.5 * var.sqrt()
    };
    let sp = (var - sm * sm).max(0.04).sqrt();
    let mut theta: Vec<f64> = spec
        .model
        .params()
        .iter()
        .map(|k| match k {
            ParamKind::Mu | ParamKind::MuLoc => mean,
            ParamKind::SigmaPop | ParamKind::MuScale => sp,
            ParamKind::SigmaMeas => sm,
            ParamKind::Df => 8.0,
            ParamKind::SigmaMeas1 => 0.8 * sm,
            ParamKind::SigmaMeas2 => 2.5 * sm,
            ParamKind::Weight => 0.8,
            ParamKind::MuSkew => 0.0,
        })
        .collect();
    for (v, p) in theta.iter_mut().zip(&spec.priors.priors) {
        let width = if (p.upper - p.lower).is_finite() { p.upper - p.lower } else { 1.0 };
        let margin = 0.02 * width;
        if p.lower.is_finite() {
            *v = v.max(p.lower + margin);
        }
        if p.upper.is_finite() {
            *v = v.min(p.upper - margin);
        }
    }
    if let Some(k) = spec.mixture_index() {
        if theta[k] >= theta[k + 1] {
            theta[k + 1] = theta[k] * 1.5;
        }
    }
    let mut starts = vec![theta.clone()];
    if spec.model == ModelId::D {
        let b = (2.0 / std::f64::consts::PI).sqrt();
        for shape in [-4.0f64, 4.0] {
            let delta = shape / (1.0 + shape * shape).sqrt();
            let omega = sp / (1.0 - b * b * delta * delta).sqrt();
            let mut t = theta.clone();
            t[0] = mean - omega * b * delta;
            t[1] = omega.max(spec.priors.priors[1].lower * 1.05);
            t[2] = shape.clamp(spec.priors.priors[2].lower * 0.9, spec.priors.priors[2].upper * 0.9);
            starts.push(t);
        }
    }
    starts
}

/// Coordinates the chains move in. For the skewed population the location and
/// log scale are shifted to the population mean and log sd; the map is
/// triangular with unit diagonal, so densities carry over unchanged.
fn to_sampler(spec: &ModelSpec, u: &[f64]) -> Vec<f64> {
    let mut w = u.to_vec();
    if spec.model == ModelId::D {
        let (theta, _) = spec.constrain(u);
        let (shift, log_shift) = skew_shifts(theta[1], theta[2]);
        w[0] += shift;
        w[1] += log_shift;
    }
    w
}

fn from_sampler(spec: &ModelSpec, w: &[f64]) -> Vec<f64> {
    let mut u = w.to_vec();
    if spec.model == ModelId::D {
        let shape = spec.constrain(u.as_slice()).0[2];
        let (_, log_shift) = skew_shifts(1.0, shape);
        u[1] = w[1] - log_shift;
        let omega = spec.constrain(&u).0[1];
        u[0] = w[0] - skew_shifts(omega, shape).0;
    }
    u
}

/// Mean offset `omega * delta * sqrt(2/pi)` and the log ratio of sd to scale.
fn skew_shifts(omega: f64, shape: f64) -> (f64, f64) {
    let b = (2.0 / std::f64::consts::PI).sqrt();
    let delta = shape / (1.0 + shape * shape).sqrt();
    (omega * b * delta, 0.5 * (1.0 - b * b * delta * delta).ln())
}

fn sampler_log_density(post: &StratumPosterior<'_>, w: &[f64]) -> f64 {
    post.log_density_unconstrained(&from_sampler(post.spec, w))
}

/// Approximate posterior mode and inverse-Hessian covariance in sampler
/// coordinates.
fn laplace_start(post: &StratumPosterior<'_>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = post.spec.dim();
    let neg = |w: &[f64]| -sampler_log_density(post, w);
    let mut best = initial_guesses(post.spec, post.data)
        .into_iter()
        .map(|theta| nelder_mead(neg, &to_sampler(post.spec, &post.spec.unconstrain(&theta)), 0.3, 30 * d, 1e-8))
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    for _ in 0..3 {
        let again = nelder_mead(neg, &best.x, 0.1, 80 * d, 1e-10);
        let improved = again.value < best.value - 1e-6;
        best = if again.value < best.value { again } else { best };
        if !improved {
            break;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::domain(format!(
            "could not find a point of positive posterior density for stratum {}",
            post.data.stratum
        )));
    }
    let hess = fd_hessian(neg, &best.x, 1e-3);
    let cov = spd_inverse(&hess)
        .filter(|c| (0..d).all(|i| c[i][i].is_finite() && c[i][i] < 100.0))
        .unwrap_or_else(|| (0..d).map(|i| (0..d).map(|j| if i == j { 0.01 } else { 0.0 }).collect()).collect());
    Ok((best.x, cov))
}

fn chain_rng(seed: u64, stratum: usize, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stratum as u64) << 32) | chain as u64);
    rng
}

/// Samples the marginalized posterior. Strata are independent blocks, so each
/// (stratum, chain) pair runs on its own; draws are recombined by iteration.
pub fn fit_mcmc(spec: &ModelSpec, data: &[StratumData], config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData {
            what: "strata",
            needed: 1,
            got: 0,
        });
    }
    let marginalizer = Marginalizer::new(config.quad_nodes, config.quad_mode)?;
    let d = spec.dim();

    let starts: Vec<(Vec<f64>, Vec<Vec<f64>>)> = data
        .par_iter()
        .map(|s| {
            laplace_start(&StratumPosterior {
                spec,
                data: s,
                marginalizer: &marginalizer,
            })
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..data.len()).flat_map(|s| (0..config.chains).map(move |c| (s, c))).collect();
    let runs: Vec<RwmChain> = jobs
        .par_iter()
        .map(|&(s, c)| {
            let post = StratumPosterior {
                spec,
                data: &data[s],
                marginalizer: &marginalizer,
            };
            let mut rng = chain_rng(config.seed, s, c);
            let (mode, cov) = &starts[s];
            let chol = cholesky(cov).expect("start covariance is positive definite");
            // dispersed start around the mode
            let mut init = mode.clone();
            for _ in 0..50 {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let cand: Vec<f64> = (0..d)
                    .map(|i| mode[i] + 1.5 * (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
                    .collect();
                if sampler_log_density(&post, &cand).is_finite() {
                    init = cand;
                    break;
                }
            }
            adaptive_metropolis(
                |w| sampler_log_density(&post, w),
                &init,
                mode,
                cov,
                config.warmup,
                config.iters,
                config.thin,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;

    let mut chains = Vec::with_capacity(config.chains);
    for c in 0..config.chains {
        let mut rows = vec![Vec::with_capacity(d * data.len()); config.iters];
        let mut acceptance = Vec::with_capacity(data.len());
        for s in 0..data.len() {
            let run = &runs[s * config.chains + c];
            acceptance.push(run.acceptance);
            for (row, u) in rows.iter_mut().zip(&run.draws) {
                row.extend(spec.constrain(&from_sampler(spec, u)).0);
            }
        }
        chains.push(ChainDraws { draws: rows, acceptance });
    }

    let strata: Vec<StratumLayout> = data
        .iter()
        .enumerate()
        .map(|(i, s)| StratumLayout {
            stratum: s.stratum.clone(),
            cutoff: s.cutoff,
            offset: i * d,
        })
        .collect();
    let param_names = strata.iter().flat_map(|s| spec.param_names(&s.stratum)).collect();
    let mut out = PosteriorDraws {
        spec: spec.clone(),
        strata,
        param_names,
        config: *config,
        chains,
        rhat: Vec::new(),
        ess: Vec::new(),
        converged: false,
    };
    let p = d * data.len();
    out.rhat = (0..p).map(|j| split_rhat(&out.column(j))).collect();
    out.ess = (0..p).map(|j| effective_sample_size(&out.column(j))).collect();
    out.converged = out.rhat.iter().all(|&r| r <= RHAT_THRESHOLD);
    Ok(out)
}

/// Convenience for callers holding a model id with default priors.
pub fn fit_default(model: ModelId, data: &[StratumData], config: &McmcConfig) -> Result<PosteriorDraws> {
    fit_mcmc(&ModelSpec::new(model), data, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{Prior, PriorSpec};
    use crate::simulate::MeasurementPair;

    #[test]
    fn correlated_gaussian_moments() {
        // N((1, −2), [[1, 0.8·2], [0.8·2, 4]])
        let (m, s1, s2, r) = ([1.0, -2.0], 1.0, 2.0, 0.8);
        let logp = |u: &[f64]| {
            let (a, b) = ((u[0] - m[0]) / s1, (u[1] - m[1]) / s2);
            -(a * a - 2.0 * r * a * b + b * b) / (2.0 * (1.0 - r * r))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let chains: Vec<RwmChain> = (0..4)
            .map(|_| adaptive_metropolis(logp, &[0.0, 0.0], &[0.0, 0.0], &eye, 2000, 20_000, 1, &mut rng).unwrap())
            .collect();
        let col = |j: usize| -> Vec<Vec<f64>> { chains.iter().map(|c| c.draws.iter().map(|u| u[j]).collect()).collect() };
        for (j, (&mean, sd)) in m.iter().zip([s1, s2]).enumerate() {
            let c = col(j);
            let ess = effective_sample_size(&c);
            let flat: Vec<f64> = c.concat();
            let est = flat.iter().sum::<f64>() / flat.len() as f64;
            let var = flat.iter().map(|x| (x - est).powi(2)).sum::<f64>() / flat.len() as f64;
            let mcse = sd / ess.sqrt();
            assert!((est - mean).abs() < 3.0 * mcse, "mean {j}: {est} vs {mean} (mcse {mcse})");
            // var of the sample variance ≈ 2σ⁴/ESS
            let var_se = (2.0f64).sqrt() * sd * sd / ess.sqrt();
            assert!((var - sd * sd).abs() < 3.0 * var_se, "var {j}: {var}");
        }
        for c in &chains {
            assert!(c.acceptance > 0.2 && c.acceptance < 0.9, "{}", c.acceptance);
        }
    }

    #[test]
    fn empty_data_posterior_is_prior() {
        // with no records the sampler targets the prior
        let spec = ModelSpec::new(ModelId::A);
        let data = vec![StratumData {
            stratum: "M".into(),
            cutoff: 13.0,
            records: vec![],
        }];
        let cfg = McmcConfig {
            chains: 2,
            warmup: 1000,
            iters: 4000,
            seed: 3,
            ..McmcConfig::default()
        };
        let draws = fit_mcmc(&spec, &data, &cfg).unwrap();
        let mu: Vec<f64> = draws.column(0).concat();
        let mean = mu.iter().sum::<f64>() / mu.len() as f64;
        let ess = draws.ess[0];
        assert!((mean - 15.0).abs() < 3.0 * 2.0 / ess.sqrt(), "{mean}, ess {ess}");
    }

    #[test]
    fn tight_prior_dominates() {
        let point = [14.0, 0.9, 0.5];
        let priors = PriorSpec {
            priors: vec![
                Prior::normal(point[0], 1e-4, f64::NEG_INFINITY, f64::INFINITY),
                Prior::normal(point[1], 1e-4, 0.2, 20.0),
                Prior::normal(point[2], 1e-4, 0.2, 20.0),
            ],
        };
        let spec = ModelSpec::with_priors(ModelId::A, priors).unwrap();
        let records: Vec<MeasurementPair> = (0..50)
            .map(|i| MeasurementPair {
                id: i,
                stratum: "F".into(),
                x1: 11.0 + 0.1 * i as f64,
                x2: None,
                cutoff: 12.5,
            })
            .collect();
        let data = StratumData::group(&records).unwrap();
        let cfg = McmcConfig {
            chains: 2,
            warmup: 300,
            iters: 300,
            ..McmcConfig::default()
        };
        let draws = fit_mcmc(&spec, &data, &cfg).unwrap();
        for (j, &want) in point.iter().enumerate() {
            let c = draws.column(j).concat();
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            assert!((mean - want).abs() < 1e-3, "{j}: {mean}");
        }
        assert_eq!(draws.total_draws(), 600);
        assert_eq!(draws.param_names, ["mu[F]", "sigma_pop[F]", "sigma_meas[F]"]);
    }

    #[test]
    fn config_requires_two_chains() {
        let cfg = McmcConfig {
            chains: 1,
            ..McmcConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sampler_map_round_trips() {
        let spec = ModelSpec::new(ModelId::D);
        for theta in [[14.8, 0.55, 5.0, 0.55, 5.0], [13.0, 1.3, -9.0, 0.3, 2.5], [15.0, 0.4, 0.0, 1.0, 20.0]] {
            let u = spec.unconstrain(&theta);
            let w = to_sampler(&spec, &u);
            let back = from_sampler(&spec, &w);
            for (a, b) in u.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
            // first coordinate is the population mean
            let b = (2.0 / std::f64::consts::PI).sqrt();
            let mean = theta[0] + theta[1] * b * theta[2] / (1.0 + theta[2] * theta[2]).sqrt();
            assert!((w[0] - mean).abs() < 1e-12);
        }
        let a = ModelSpec::new(ModelId::A);
        assert_eq!(to_sampler(&a, &[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }
}
