//! K-fold cross-validation of models a–d by computed marginal log pointwise
//! predictive density (cLPPD).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    fit_mcmc, log_likelihood_given_truth, Marginalizer, McmcConfig, ModelId, ModelSpec, PosteriorDraws, QuadratureMode,
    StratumData, StratumModel,
};
use crate::error::{Error, Result};
use crate::simulate::MeasurementPair;

/// Stratified K-fold split. Records of each stratum are shuffled and dealt
/// round-robin, continuing the count across strata, so fold sizes differ by
/// at most one overall and within each stratum. Indices are sorted.
pub fn kfold_split(records: &[MeasurementPair], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::domain(format!("K must be at least 2, got {k}")));
    }
    if k > records.len() {
        return Err(Error::InsufficientData {
            what: "records for the requested number of folds",
            needed: k,
            got: records.len(),
        });
    }
    let mut strata: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match strata.iter_mut().find(|(s, _)| *s == r.stratum) {
            Some((_, v)) => v.push(i),
            None => strata.push((&r.stratum, vec![i])),
        }
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (j, (_, mut idx)) in strata.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerIntegral {
    Quadrature,
    /// `r` latent draws from the population per record and parameter draw.
    MonteCarlo { r: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClppdConfig {
    /// Posterior draws S, spread evenly over the pooled sample.
    pub draws: usize,
    pub inner: InnerIntegral,
    pub quad_nodes: usize,
    pub quad_mode: QuadratureMode,
    pub seed: u64,
}

impl Default for ClppdConfig {
    fn default() -> Self {
        Self {
            draws: 500,
            inner: InnerIntegral::Quadrature,
            quad_nodes: 32,
            quad_mode: QuadratureMode::Auto,
            seed: 1,
        }
    }
}

/// Parameter draws of one stratum as ready-to-evaluate models.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub stratum: String,
    pub models: Vec<StratumModel>,
}

/// Up to `s` evenly spread draws per stratum.
pub fn predictive_draws(draws: &PosteriorDraws, s: usize) -> Result<Vec<PredictiveDraws>> {
    if s == 0 {
        return Err(Error::domain("S must be at least 1"));
    }
    let d = draws.spec.dim();
    let rows = draws.thinned(s);
    draws
        .strata
        .iter()
        .map(|layout| {
            let models = rows
                .iter()
                .map(|row| draws.spec.model.build(&row[layout.offset..layout.offset + d]))
                .collect::<Result<_>>()?;
            Ok(PredictiveDraws {
                stratum: layout.stratum.clone(),
                models,
            })
        })
        .collect()
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + (v.iter().map(|x| (x - max).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Σᵢ log(1/S Σₛ exp ℓᵢₛ) for a records × draws matrix of log-likelihoods.
pub fn clppd_from_loglik(loglik: &[Vec<f64>]) -> f64 {
    loglik.iter().map(|row| log_mean_exp(row)).sum()
}

/// Monte Carlo estimate of p(xs | θ) from `r` latent draws, with its standard
/// error.
pub fn mc_record_likelihood(xs: &[f64], model: &StratumModel, r: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..r {
        let t = model.population.sample(rng);
        let p = log_likelihood_given_truth(xs, t, &model.measurement).exp();
        sum += p;
        sum_sq += p * p;
    }
    let n = r as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

fn record_xs(r: &MeasurementPair) -> Vec<f64> {
    std::iter::once(r.x1).chain(r.x2).collect()
}

/// Records × draws matrix of record log-likelihoods.
pub fn pointwise_loglik(records: &[MeasurementPair], draws: &[PredictiveDraws], config: &ClppdConfig) -> Result<Vec<Vec<f64>>> {
    let marginalizer = Marginalizer::new(config.quad_nodes, config.quad_mode)?;
    records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let models = &draws
                .iter()
                .find(|d| d.stratum == rec.stratum)
                .ok_or_else(|| Error::UnknownStratum(rec.stratum.clone()))?
                .models;
            let xs = record_xs(rec);
            match config.inner {
                InnerIntegral::Quadrature => models
                    .iter()
                    .map(|m| {
                        marginalizer.log_marginal(&xs, m).ok_or_else(|| Error::Evaluation {
                            record_id: rec.id,
                            reason: "non-finite marginal likelihood".into(),
                        })
                    })
                    .collect(),
                InnerIntegral::MonteCarlo { r } => {
                    if r == 0 {
                        return Err(Error::domain("R must be at least 1"));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(i as u64);
                    Ok(models.iter().map(|m| mc_record_likelihood(&xs, m, r, &mut rng).0.ln()).collect())
                }
            }
        })
        .collect()
}

/// cLPPD of `records` under the predictive draws. A record with zero
/// likelihood under every draw is an error naming the record.
pub fn clppd(records: &[MeasurementPair], draws: &[PredictiveDraws], config: &ClppdConfig) -> Result<f64> {
    let ll = pointwise_loglik(records, draws, config)?;
    for (rec, row) in records.iter().zip(&ll) {
        if log_mean_exp(row) == f64::NEG_INFINITY {
            return Err(Error::Evaluation {
                record_id: rec.id,
                reason: "zero predictive likelihood under all posterior draws".into(),
            });
        }
    }
    Ok(clppd_from_loglik(&ll))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub fold_seed: u64,
    pub models: Vec<ModelId>,
    pub mcmc: McmcConfig,
    pub clppd: ClppdConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            fold_seed: 1,
            models: ModelId::ALL.to_vec(),
            mcmc: McmcConfig {
                chains: 2,
                warmup: 500,
                iters: 500,
                ..McmcConfig::default()
            },
            clppd: ClppdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCv {
    pub model: ModelId,
    /// Held-out cLPPD per fold.
    pub fold_clppd: Vec<f64>,
    pub total: f64,
    pub converged: Vec<bool>,
    pub max_rhat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    pub models: Vec<ModelCv>,
}

impl CvReport {
    pub fn best(&self) -> Option<&ModelCv> {
        self.models.iter().max_by(|a, b| a.total.total_cmp(&b.total))
    }

    pub fn model(&self, id: ModelId) -> Option<&ModelCv> {
        self.models.iter().find(|m| m.model == id)
    }
}

/// Fits every model on every training split with the same folds and scores
/// the held-out fold.
pub fn run_cv(records: &[MeasurementPair], config: &CvConfig) -> Result<CvReport> {
    if config.models.is_empty() {
        return Err(Error::domain("no models to compare"));
    }
    let folds = kfold_split(records, config.k, config.fold_seed)?;
    let jobs: Vec<(usize, usize)> = (0..config.models.len())
        .flat_map(|m| (0..config.k).map(move |f| (m, f)))
        .collect();
    let results: Vec<(f64, bool, f64)> = jobs
        .par_iter()
        .map(|&(m, f)| {
            let mut held = vec![false; records.len()];
            folds[f].iter().for_each(|&i| held[i] = true);
            let train: Vec<MeasurementPair> = records.iter().zip(&held).filter(|(_, h)| !**h).map(|(r, _)| r.clone()).collect();
            let valid: Vec<MeasurementPair> = folds[f].iter().map(|&i| records[i].clone()).collect();
            let mcmc = McmcConfig {
                seed: config.mcmc.seed.wrapping_add(f as u64),
                ..config.mcmc
            };
            let fit = fit_mcmc(&ModelSpec::new(config.models[m]), &StratumData::group(&train)?, &mcmc)?;
            let pd = predictive_draws(&fit, config.clppd.draws)?;
            let value = clppd(&valid, &pd, &config.clppd)?;
            Ok((value, fit.converged, fit.max_rhat()))
        })
        .collect::<Result<_>>()?;
    let models = config
        .models
        .iter()
        .enumerate()
        .map(|(m, &model)| {
            let rows = &results[m * config.k..(m + 1) * config.k];
            ModelCv {
                model,
                fold_clppd: rows.iter().map(|r| r.0).collect(),
                total: rows.iter().map(|r| r.0).sum(),
                converged: rows.iter().map(|r| r.1).collect(),
                max_rhat: rows.iter().map(|r| r.2).collect(),
            }
        })
        .collect();
    Ok(CvReport {
        k: config.k,
        folds,
        models,
    })
}

/// Foldwise cLPPD(other) − cLPPD(reference); positive favours `model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub model: ModelId,
    pub reference: ModelId,
    pub foldwise: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// SD / √K
    pub se: f64,
}

pub fn compare_models(report: &CvReport, reference: ModelId) -> Result<Vec<PairedDifference>> {
    let k = report.folds.len();
    if let Some(bad) = report.models.iter().find(|m| m.fold_clppd.len() != k) {
        return Err(Error::FoldMismatch(format!(
            "model {} has {} fold values for {} folds",
            bad.model,
            bad.fold_clppd.len(),
            k
        )));
    }
    let base = report
        .model(reference)
        .ok_or_else(|| Error::domain(format!("reference model {reference} is not in the report")))?;
    Ok(report
        .models
        .iter()
        .filter(|m| m.model != reference)
        .map(|m| {
            let foldwise: Vec<f64> = m.fold_clppd.iter().zip(&base.fold_clppd).map(|(a, b)| a - b).collect();
            let n = k as f64;
            let mean = foldwise.iter().sum::<f64>() / n;
            let sd = (foldwise.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            PairedDifference {
                model: m.model,
                reference,
                foldwise,
                mean,
                sd,
                se: sd / n.sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::record_marginal_loglik;
    use crate::simulate::{reference_dgp, simulate_dgp};
    use proptest::prelude::*;

    fn records(n_m: usize, n_f: usize) -> Vec<MeasurementPair> {
        (0..n_m + n_f)
            .map(|i| MeasurementPair {
                id: i as u64,
                stratum: if i < n_m { "M" } else { "F" }.into(),
                x1: 12.0 + 0.01 * i as f64,
                x2: (i % 3 == 0).then_some(12.5),
                cutoff: 13.0,
            })
            .collect()
    }

    #[test]
    fn ten_records_five_folds_of_two() {
        let folds = kfold_split(&records(10, 0), 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn rejects_bad_k() {
        assert!(kfold_split(&records(3, 0), 4, 1).is_err());
        assert!(kfold_split(&records(3, 0), 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(n_m in 0usize..60, n_f in 0usize..60, k in 2usize..8, seed in any::<u64>()) {
            prop_assume!(n_m + n_f >= k);
            let recs = records(n_m, n_f);
            let folds = kfold_split(&recs, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..recs.len()).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in &folds {
                let m = f.iter().filter(|&&i| recs[i].stratum == "M").count() as f64;
                prop_assert!((m - n_m as f64 / k as f64).abs() < 1.0);
            }
            prop_assert_eq!(&folds, &kfold_split(&recs, k, seed).unwrap());
        }

        #[test]
        fn constant_shift_moves_clppd_by_n_times_constant(
            rows in prop::collection::vec(prop::collection::vec(-20.0..0.0f64, 1..6), 1..20),
            c in -5.0..5.0f64,
        ) {
            let width = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, -3.0); r }).collect();
            let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
            let d = clppd_from_loglik(&shifted) - clppd_from_loglik(&rows);
            prop_assert!((d - rows.len() as f64 * c).abs() < 1e-9 * (1.0 + d.abs()));
        }
    }

    #[test]
    fn single_draw_reduces_to_marginal_loglik() {
        let data = simulate_dgp(ModelId::B, &reference_dgp(ModelId::B), 150, 4).unwrap();
        let dgp = reference_dgp(ModelId::B);
        let draws: Vec<PredictiveDraws> = dgp
            .iter()
            .map(|s| PredictiveDraws {
                stratum: s.stratum.clone(),
                models: vec![StratumModel {
                    population: s.population,
                    measurement: s.measurement,
                }],
            })
            .collect();
        let got = clppd(&data, &draws, &ClppdConfig::default()).unwrap();
        let m = Marginalizer::new(32, QuadratureMode::Auto).unwrap();
        let want: f64 = data
            .iter()
            .map(|r| {
                let model = &draws.iter().find(|d| d.stratum == r.stratum).unwrap().models[0];
                record_marginal_loglik(r, model, &m).unwrap()
            })
            .sum();
        assert!((got - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn monte_carlo_inner_integral_agrees_with_quadrature() {
        let model = ModelId::A.build(&[15.0, 1.0, 0.5]).unwrap();
        let m = Marginalizer::new(32, QuadratureMode::Auto).unwrap();
        for xs in [vec![12.7], vec![12.7, 12.2], vec![16.1]] {
            let exact = m.log_marginal(&xs, &model).unwrap().exp();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let (est, se) = mc_record_likelihood(&xs, &model, 100_000, &mut rng);
            assert!((est - exact).abs() < 3.0 * se, "{xs:?}: {est} vs {exact} (se {se})");
        }
    }

    #[test]
    fn monte_carlo_path_is_deterministic() {
        let data = simulate_dgp(ModelId::A, &reference_dgp(ModelId::A), 40, 2).unwrap();
        let draws: Vec<PredictiveDraws> = reference_dgp(ModelId::A)
            .iter()
            .map(|s| PredictiveDraws {
                stratum: s.stratum.clone(),
                models: vec![
                    StratumModel {
                        population: s.population,
                        measurement: s.measurement,
                    };
                    3
                ],
            })
            .collect();
        let cfg = ClppdConfig {
            inner: InnerIntegral::MonteCarlo { r: 200 },
            ..ClppdConfig::default()
        };
        let a = clppd(&data, &draws, &cfg).unwrap();
        assert_eq!(a, clppd(&data, &draws, &cfg).unwrap());
        let q = clppd(&data, &draws, &ClppdConfig::default()).unwrap();
        assert!((a - q).abs() < 0.05 * q.abs());
    }

    #[test]
    fn zero_likelihood_names_the_record() {
        let draws = vec![PredictiveDraws {
            stratum: "M".into(),
            models: vec![ModelId::A.build(&[15.0, 1.0, 0.5]).unwrap()],
        }];
        let mut recs = records(1, 0);
        recs[0].x1 = 1e6;
        recs[0].id = 77;
        let cfg = ClppdConfig {
            inner: InnerIntegral::MonteCarlo { r: 10 },
            ..ClppdConfig::default()
        };
        match clppd(&recs, &draws, &cfg) {
            Err(Error::Evaluation { record_id, .. }) => assert_eq!(record_id, 77),
            other => panic!("expected an evaluation error, got {other:?}"),
        }
        let mut f = records(0, 1);
        f[0].x2 = None;
        assert!(matches!(clppd(&f, &draws, &ClppdConfig::default()), Err(Error::UnknownStratum(_))));
    }

    fn report(values: &[(ModelId, Vec<f64>)]) -> CvReport {
        CvReport {
            k: values[0].1.len(),
            folds: vec![Vec::new(); values[0].1.len()],
            models: values
                .iter()
                .map(|(m, v)| ModelCv {
                    model: *m,
                    fold_clppd: v.clone(),
                    total: v.iter().sum(),
                    converged: vec![true; v.len()],
                    max_rhat: vec![1.0; v.len()],
                })
                .collect(),
        }
    }

    #[test]
    fn paired_differences() {
        let r = report(&[
            (ModelId::D, vec![-100.0, -110.0, -90.0, -105.0, -95.0]),
            (ModelId::A, vec![-110.0, -115.0, -100.0, -120.0, -100.0]),
        ]);
        let d = compare_models(&r, ModelId::D).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].foldwise, vec![-10.0, -5.0, -10.0, -15.0, -5.0]);
        assert_eq!(d[0].mean, -9.0);
        let sd = (((1.0 + 16.0 + 1.0 + 36.0 + 16.0) / 4.0) as f64).sqrt();
        assert!((d[0].sd - sd).abs() < 1e-12);
        assert!((d[0].se - sd / 5f64.sqrt()).abs() < 1e-12);
        let own = compare_models(&report(&[(ModelId::B, vec![1.0, 2.0]), (ModelId::C, vec![1.0, 2.0])]), ModelId::B).unwrap();
        assert!(own[0].foldwise.iter().all(|&v| v == 0.0));
        assert_eq!(r.best().unwrap().model, ModelId::D);
    }

    #[test]
    fn fold_mismatch_is_reported() {
        let mut r = report(&[(ModelId::A, vec![1.0, 2.0]), (ModelId::B, vec![1.0, 2.0])]);
        r.models[1].fold_clppd.pop();
        assert!(matches!(compare_models(&r, ModelId::A), Err(Error::FoldMismatch(_))));
    }

    #[test]
    fn cv_totals_are_fold_sums() {
        let data = simulate_dgp(ModelId::A, &reference_dgp(ModelId::A), 120, 9).unwrap();
        let cfg = CvConfig {
            k: 3,
            models: vec![ModelId::A, ModelId::B],
            mcmc: McmcConfig {
                chains: 2,
                warmup: 100,
                iters: 100,
                ..McmcConfig::default()
            },
            clppd: ClppdConfig {
                draws: 50,
                ..ClppdConfig::default()
            },
            ..CvConfig::default()
        };
        let r = run_cv(&data, &cfg).unwrap();
        for m in &r.models {
            assert_eq!(m.fold_clppd.len(), 3);
            assert!((m.total - m.fold_clppd.iter().sum::<f64>()).abs() < 1e-9);
        }
        assert_eq!(r, run_cv(&data, &cfg).unwrap());
    }
}
