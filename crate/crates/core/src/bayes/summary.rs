use serde::{Deserialize, Serialize};

use super::mcmc::PosteriorDraws;
use super::model::StratumModel;
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumShare {
    pub stratum: String,
    /// posterior mean of the measurement share of total variance
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    /// draws with finite measurement variance that entered the summary
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
    pub variance_share: Vec<StratumShare>,
    pub converged: bool,
}

fn describe(values: &mut [f64]) -> (f64, f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    values.sort_by(f64::total_cmp);
    (
        mean,
        sd,
        quantile_sorted(values, 0.025),
        quantile_sorted(values, 0.5),
        quantile_sorted(values, 0.975),
    )
}

/// Share of total variance due to measurement error,
/// Var(error) / (Var(population) + Var(error)). `None` when the error variance
/// is infinite.
pub fn measurement_variance_share(model: &StratumModel) -> Option<f64> {
    let vm = model.measurement.variance();
    let vp = model.population.variance();
    (vm.is_finite() && vp.is_finite()).then(|| vm / (vp + vm))
}

pub fn posterior_summary(draws: &PosteriorDraws) -> PosteriorSummary {
    let params = draws
        .param_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut v: Vec<f64> = draws.pooled().map(|r| r[j]).collect();
            let (mean, sd, q025, q50, q975) = describe(&mut v);
            ParamSummary {
                name: name.clone(),
                mean,
                sd,
                q025,
                q50,
                q975,
                rhat: draws.rhat.get(j).copied().unwrap_or(f64::NAN),
                ess: draws.ess.get(j).copied().unwrap_or(f64::NAN),
            }
        })
        .collect();
    let variance_share = draws
        .strata
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut shares: Vec<f64> = draws
                .stratum_draws(i)
                .into_iter()
                .filter_map(|theta| draws.spec.model.build(theta).ok())
                .filter_map(|m| measurement_variance_share(&m))
                .collect();
            let n = shares.len();
            let (mean, _, q025, _, q975) = if n > 0 {
                describe(&mut shares)
            } else {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            };
            StratumShare {
                stratum: s.stratum.clone(),
                mean,
                q025,
                q975,
                n_draws: n,
            }
        })
        .collect();
    PosteriorSummary {
        params,
        variance_share,
        converged: draws.converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::ModelId;
    use approx::assert_relative_eq;

    #[test]
    fn share_from_point_estimates() {
        // σ²_pop, s, df → s²·df/(df−2) / (σ²_pop + s²·df/(df−2))
        let male = ModelId::B.build(&[15.74, 1.63f64.sqrt(), 0.36, 2.60]).unwrap();
        let female = ModelId::B.build(&[13.82, 1.13f64.sqrt(), 0.36, 3.28]).unwrap();
        assert_relative_eq!(measurement_variance_share(&male).unwrap(), 0.256_251_140_7, epsilon = 1e-6);
        assert_relative_eq!(measurement_variance_share(&female).unwrap(), 0.227_139_046_6, epsilon = 1e-6);
    }

    #[test]
    fn symmetric_draws_mean_equals_median() {
        let mut v: Vec<f64> = (0..101).map(|i| (i as f64 - 50.0).powi(3)).collect();
        let (mean, _, q025, q50, q975) = describe(&mut v);
        assert_relative_eq!(mean, q50, epsilon = 1e-9);
        assert_relative_eq!(q025, -q975, epsilon = 1e-9);
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_relative_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_relative_eq!(quantile_sorted(&s, 1.0), 4.0);
    }
}
