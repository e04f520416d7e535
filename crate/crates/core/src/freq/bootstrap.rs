use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate, FrequentistEstimate, Method};
use crate::error::{Error, Result};
use crate::simulate::MeasurementPair;
use crate::stats::quantile_sorted;

/// Largest tolerated share of failed replicates.
const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamInterval {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

impl ParamInterval {
    fn from_values(mut v: Vec<f64>) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        v.sort_by(f64::total_cmp);
        Self {
            mean,
            sd,
            q025: quantile_sorted(&v, 0.025),
            q975: quantile_sorted(&v, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub method: Method,
    pub replicates: usize,
    pub failed: usize,
    pub mu_hat: ParamInterval,
    pub sigma_total_sq_hat: ParamInterval,
    pub rho_hat: ParamInterval,
    pub sigma_pop_sq_hat: ParamInterval,
    pub sigma_meas_sq_hat: ParamInterval,
}

/// Resamples whole records with replacement, so retested and single records
/// keep their proportions in expectation, and re-runs the estimator. Each
/// replicate uses its own ChaCha8 stream of `seed`.
pub fn bootstrap(
    records: &[MeasurementPair],
    method: Method,
    cutoff: Option<f64>,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if replicates == 0 {
        return Err(Error::domain("bootstrap needs at least one replicate"));
    }
    if records.is_empty() {
        return Err(Error::InsufficientData {
            what: "records",
            needed: 2,
            got: 0,
        });
    }
    let outcomes: Vec<Result<FrequentistEstimate>> = (0..replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let sample: Vec<MeasurementPair> = (0..records.len())
                .map(|_| records[rng.random_range(0..records.len())].clone())
                .collect();
            estimate(&sample, method, cutoff)
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed as f64 > MAX_FAILURE_SHARE * replicates as f64 {
        let first = outcomes
            .iter()
            .find_map(|o| o.as_ref().err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::Bootstrap {
            failed,
            total: replicates,
            first,
        });
    }
    let ok: Vec<FrequentistEstimate> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let column = |f: fn(&FrequentistEstimate) -> f64| ParamInterval::from_values(ok.iter().map(f).collect());
    Ok(BootstrapSummary {
        method,
        replicates,
        failed,
        mu_hat: column(|e| e.mu_hat),
        sigma_total_sq_hat: column(|e| e.sigma_total_sq_hat),
        rho_hat: column(|e| e.rho_hat),
        sigma_pop_sq_hat: column(|e| e.sigma_pop_sq_hat),
        sigma_meas_sq_hat: column(|e| e.sigma_meas_sq_hat),
    })
}
