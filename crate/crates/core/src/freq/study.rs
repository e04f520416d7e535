//! Repeated-simulation studies of the estimators: naive bias against the
//! closed-form bias across cutoffs, and estimator bias under probabilistic
//! retesting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_rho_ce, estimate_rho_mle, naive_sigma_meas_sq, theoretical_naive_bias, Method};
use crate::error::{Error, Result};
use crate::simulate::{simulate_pairs, GeneratorSpec, RetestPolicy};
use crate::stats::{quantile_sorted, MeasurementDensity};

/// Standard normal 97.5% quantile.
const Z_975: f64 = 1.959_963_984_540_054;

/// Normal population and normal error, simulated `replicates` times with `n`
/// records each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub mu: f64,
    pub sigma_pop: f64,
    pub sigma_meas: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl StudyDesign {
    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.replicates < 2 {
            return Err(Error::domain("a study needs n >= 2 and at least 2 replicates"));
        }
        Ok(())
    }

    /// Seeds of the datasets in cell `cell`, one per replicate.
    fn dataset_seeds(&self, cell: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(cell);
        (0..self.replicates).map(|_| rng.random()).collect()
    }

    fn generator(&self, policy: RetestPolicy, seed: u64) -> Result<GeneratorSpec> {
        Ok(GeneratorSpec {
            stratum: "all".into(),
            population: MeasurementDensity::normal(self.mu, self.sigma_pop)?,
            measurement: Some(MeasurementDensity::normal(0.0, self.sigma_meas)?),
            policy,
            n: self.n,
            seed,
            first_id: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCurvePoint {
    pub cutoff: f64,
    pub theoretical: f64,
    /// Mean of σ²_meas − naive estimate over replicates.
    pub simulated: f64,
    /// Percentile bootstrap band of `simulated` at the requested level.
    pub lower: f64,
    pub upper: f64,
    pub replicates: usize,
    /// Replicates with fewer than two complete pairs.
    pub failed: usize,
}

/// Naive-estimator bias across a grid of hard cutoffs, with a bootstrap band
/// for the mean of the simulated biases.
pub fn naive_bias_curve(design: &StudyDesign, cutoffs: &[f64], level: f64, boot: usize) -> Result<Vec<BiasCurvePoint>> {
    design.validate()?;
    if !(level > 0.0 && level < 1.0) || boot == 0 {
        return Err(Error::domain("band level must lie in (0, 1) and boot must be positive"));
    }
    let truth = design.sigma_meas * design.sigma_meas;
    cutoffs
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let policy = RetestPolicy::hard(c)?;
            let results: Vec<Option<f64>> = design
                .dataset_seeds(k as u64)
                .into_par_iter()
                .map(|s| {
                    let data = simulate_pairs(&design.generator(policy, s)?)?;
                    Ok(naive_sigma_meas_sq(&data).ok().map(|v| truth - v))
                })
                .collect::<Result<_>>()?;
            let biases: Vec<f64> = results.iter().flatten().copied().collect();
            if biases.len() < 2 {
                return Err(Error::InsufficientData {
                    what: "replicates with complete pairs",
                    needed: 2,
                    got: biases.len(),
                });
            }
            let simulated = biases.iter().sum::<f64>() / biases.len() as f64;
            let (lower, upper) = bootstrap_mean_band(&biases, level, boot, design.seed ^ ((k as u64) << 40));
            Ok(BiasCurvePoint {
                cutoff: c,
                theoretical: theoretical_naive_bias(design.mu, design.sigma_pop, design.sigma_meas, c)?,
                simulated,
                lower,
                upper,
                replicates: design.replicates,
                failed: design.replicates - biases.len(),
            })
        })
        .collect()
}

fn bootstrap_mean_band(values: &[f64], level: f64, boot: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..boot)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecheckRow {
    pub rate: f64,
    pub method: Method,
    /// Mean of σ̂_meas − σ_meas.
    pub mean_bias: f64,
    /// Normal-approximation 95% interval of the mean.
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: usize,
    pub failed: usize,
}

/// Bias of σ̂_meas from the conditional-expectation and maximum-likelihood
/// estimators when retesting below `cutoff` happens with probability
/// e^{−r(c − x1)}, for each rate r.
pub fn recheck_study(design: &StudyDesign, cutoff: f64, rates: &[f64]) -> Result<Vec<RecheckRow>> {
    design.validate()?;
    let mut rows = Vec::with_capacity(2 * rates.len());
    for (k, &rate) in rates.iter().enumerate() {
        let policy = RetestPolicy::new(cutoff, rate)?;
        let per_dataset: Vec<[Option<f64>; 2]> = design
            .dataset_seeds(k as u64)
            .into_par_iter()
            .map(|s| {
                let data = simulate_pairs(&design.generator(policy, s)?)?;
                let ce = estimate_rho_ce(&data, Some(cutoff)).ok().map(|e| e.sigma_meas_sq_hat.sqrt());
                let mle = estimate_rho_mle(&data).ok().map(|e| e.sigma_meas_sq_hat.sqrt());
                Ok([ce, mle])
            })
            .collect::<Result<_>>()?;
        for (j, method) in [Method::ConditionalExpectation, Method::Mle].into_iter().enumerate() {
            let biases: Vec<f64> = per_dataset
                .iter()
                .filter_map(|d| d[j])
                .map(|s| s - design.sigma_meas)
                .collect();
            let n = biases.len() as f64;
            let mean = biases.iter().sum::<f64>() / n;
            let sd = (biases.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            let half = Z_975 * sd / n.sqrt();
            rows.push(RecheckRow {
                rate,
                method,
                mean_bias: mean,
                ci_low: mean - half,
                ci_high: mean + half,
                replicates: design.replicates,
                failed: design.replicates - biases.len(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(replicates: usize) -> StudyDesign {
        StudyDesign {
            mu: 15.0,
            sigma_pop: 1.0,
            sigma_meas: 0.8,
            n: 4000,
            replicates,
            seed: 11,
        }
    }

    #[test]
    fn bias_curve_tracks_theory() {
        let pts = naive_bias_curve(&design(60), &[13.0, 14.0, 15.0], 0.99, 400).unwrap();
        for p in &pts {
            assert!(p.lower <= p.simulated && p.simulated <= p.upper);
            assert!(p.theoretical > p.lower - 0.01 && p.theoretical < p.upper + 0.01, "{p:?}");
            assert_eq!(p.failed, 0);
        }
        // less truncation, less bias
        assert!(pts[0].theoretical > pts[1].theoretical && pts[1].theoretical > pts[2].theoretical);
    }

    #[test]
    fn recheck_rows_cover_both_methods() {
        let rows = recheck_study(&design(8), 13.0, &[0.0, 2.0]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.ci_low <= r.mean_bias && r.mean_bias <= r.ci_high));
        assert_eq!(rows[1].method, Method::Mle);
    }

    #[test]
    fn deterministic_and_validated() {
        let a = recheck_study(&design(4), 13.0, &[1.0]).unwrap();
        let b = recheck_study(&design(4), 13.0, &[1.0]).unwrap();
        assert_eq!(a, b);
        assert!(recheck_study(&design(1), 13.0, &[1.0]).is_err());
        assert!(naive_bias_curve(&design(4), &[13.0], 1.5, 10).is_err());
    }
}
