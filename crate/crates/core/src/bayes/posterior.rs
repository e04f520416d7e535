use serde::{Deserialize, Serialize};

use super::marginal::Marginalizer;
use super::model::ModelSpec;
use crate::error::{Error, Result};
use crate::simulate::MeasurementPair;

/// Records belonging to one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumData {
    pub stratum: String,
    pub cutoff: f64,
    pub records: Vec<MeasurementPair>,
}

impl StratumData {
    /// Groups records by stratum, in order of first appearance.
    pub fn group(records: &[MeasurementPair]) -> Result<Vec<StratumData>> {
        let mut out: Vec<StratumData> = Vec::new();
        for r in records {
            match out.iter_mut().find(|s| s.stratum == r.stratum) {
                Some(s) => {
                    if s.cutoff != r.cutoff {
                        return Err(Error::domain(format!(
                            "stratum {} has inconsistent cutoffs {} and {}",
                            r.stratum, s.cutoff, r.cutoff
                        )));
                    }
                    s.records.push(r.clone());
                }
                None => out.push(StratumData {
                    stratum: r.stratum.clone(),
                    cutoff: r.cutoff,
                    records: vec![r.clone()],
                }),
            }
        }
        Ok(out)
    }

    pub fn n_pairs(&self) -> usize {
        self.records.iter().filter(|r| r.is_complete()).count()
    }
}

/// Log posterior of a single stratum's parameter block.
///
/// The retest selection depends only on x1, so it factors out of the
/// likelihood and the cutoff never enters here.
#[derive(Debug, Clone)]
pub struct StratumPosterior<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a StratumData,
    pub marginalizer: &'a Marginalizer,
}

impl StratumPosterior<'_> {
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let Ok(model) = self.spec.model.build(theta) else {
            return f64::NEG_INFINITY;
        };
        let prepared = self.marginalizer.prepare(&model);
        let mut total = 0.0;
        let mut buf = [0.0; 2];
        for r in &self.data.records {
            let xs: &[f64] = match r.x2 {
                Some(x2) => {
                    buf = [r.x1, x2];
                    &buf
                }
                None => {
                    buf[0] = r.x1;
                    &buf[..1]
                }
            };
            match prepared.log_marginal(xs) {
                Some(v) => total += v,
                None => return f64::NEG_INFINITY,
            }
        }
        total
    }

    /// Natural-scale log posterior (unnormalized); −∞ outside the support.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.spec.in_bounds(theta) {
            return f64::NEG_INFINITY;
        }
        let lp = self.spec.priors.log_density(theta);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.log_likelihood(theta)
    }

    /// Log posterior on the unconstrained scale, Jacobian included.
    pub fn log_density_unconstrained(&self, u: &[f64]) -> f64 {
        if u.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let (theta, log_jac) = self.spec.constrain(u);
        let v = self.log_density(&theta) + log_jac;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// Sum of per-stratum log posteriors; `theta` holds the stratum blocks
/// back to back.
pub fn total_log_posterior(spec: &ModelSpec, data: &[StratumData], theta: &[f64], marginalizer: &Marginalizer) -> Result<f64> {
    let d = spec.dim();
    if theta.len() != d * data.len() {
        return Err(Error::domain(format!(
            "expected {} parameters for {} strata, got {}",
            d * data.len(),
            data.len(),
            theta.len()
        )));
    }
    Ok(data
        .iter()
        .zip(theta.chunks(d))
        .map(|(s, block)| {
            StratumPosterior {
                spec,
                data: s,
                marginalizer,
            }
            .log_density(block)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{ModelId, PriorFamily, QuadratureMode};
    use crate::stats::bivariate_normal_logpdf;
    use approx::assert_relative_eq;

    fn rec(id: u64, s: &str, x1: f64, x2: Option<f64>) -> MeasurementPair {
        MeasurementPair {
            id,
            stratum: s.into(),
            x1,
            x2,
            cutoff: 13.0,
        }
    }

    #[test]
    fn model_a_likelihood_by_hand() {
        let data = StratumData {
            stratum: "M".into(),
            cutoff: 13.0,
            records: vec![rec(0, "M", 14.2, None), rec(1, "M", 12.5, Some(13.1))],
        };
        let spec = ModelSpec::new(ModelId::A);
        let q = Marginalizer::new(32, QuadratureMode::Auto).unwrap();
        let post = StratumPosterior {
            spec: &spec,
            data: &data,
            marginalizer: &q,
        };
        let theta = [15.0, 1.0, 0.8];
        let st = 1.64f64.sqrt();
        let single = crate::stats::norm_logpdf((14.2 - 15.0) / st) - st.ln();
        let pair = bivariate_normal_logpdf(12.5, 13.1, 15.0, st, 1.0 / 1.64).unwrap();
        assert_relative_eq!(post.log_likelihood(&theta), single + pair, epsilon = 1e-10);
        let lp = spec.priors.log_density(&theta);
        assert_relative_eq!(post.log_density(&theta), single + pair + lp, epsilon = 1e-10);
    }

    #[test]
    fn out_of_support_is_neg_infinity() {
        let data = StratumData {
            stratum: "M".into(),
            cutoff: 13.0,
            records: vec![rec(0, "M", 14.2, None)],
        };
        let spec = ModelSpec::new(ModelId::B);
        let q = Marginalizer::new(16, QuadratureMode::Auto).unwrap();
        let post = StratumPosterior {
            spec: &spec,
            data: &data,
            marginalizer: &q,
        };
        assert_eq!(post.log_density(&[15.0, 1.0, 0.5, 1.5]), f64::NEG_INFINITY);
        assert_eq!(post.log_density(&[15.0, 0.1, 0.5, 5.0]), f64::NEG_INFINITY);
        assert!(post.log_density(&[15.0, 1.0, 0.5, 5.0]).is_finite());
    }

    #[test]
    fn grouping_checks_cutoffs() {
        let mut recs = vec![rec(0, "M", 14.0, None), rec(1, "F", 12.0, None), rec(2, "M", 13.5, None)];
        let g = StratumData::group(&recs).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].records.len(), 2);
        recs[2].cutoff = 12.0;
        assert!(StratumData::group(&recs).is_err());
    }

    #[test]
    fn total_is_sum_of_strata() {
        let recs = vec![rec(0, "M", 14.0, None), rec(1, "F", 12.0, Some(12.4))];
        let data = StratumData::group(&recs).unwrap();
        let spec = ModelSpec::new(ModelId::A);
        let q = Marginalizer::new(16, QuadratureMode::Auto).unwrap();
        let theta = [15.0, 1.0, 0.5, 14.0, 0.9, 0.6];
        let total = total_log_posterior(&spec, &data, &theta, &q).unwrap();
        let parts: f64 = data
            .iter()
            .zip(theta.chunks(3))
            .map(|(d, t)| {
                StratumPosterior {
                    spec: &spec,
                    data: d,
                    marginalizer: &q,
                }
                .log_density(t)
            })
            .sum();
        assert_relative_eq!(total, parts);
        assert!(total_log_posterior(&spec, &data, &theta[..3], &q).is_err());
    }

    fn table1_style(n: usize, seed: u64) -> StratumData {
        use crate::simulate::{simulate_pairs, GeneratorSpec, RetestPolicy};
        use crate::stats::MeasurementDensity;
        let recs = simulate_pairs(&GeneratorSpec {
            stratum: "all".into(),
            population: MeasurementDensity::normal(15.0, 1.0).unwrap(),
            measurement: Some(MeasurementDensity::normal(0.0, 0.8).unwrap()),
            policy: RetestPolicy::hard(13.0).unwrap(),
            n,
            seed,
            first_id: 0,
        })
        .unwrap();
        StratumData::group(&recs).unwrap().remove(0)
    }

    #[test]
    fn model_a_mu_gradient_matches_finite_differences() {
        let data = table1_style(2000, 3);
        let spec = ModelSpec::new(ModelId::A);
        let q = Marginalizer::new(32, QuadratureMode::Auto).unwrap();
        let post = StratumPosterior {
            spec: &spec,
            data: &data,
            marginalizer: &q,
        };
        let PriorFamily::Normal { mean, sd } = spec.priors.priors[0].family else {
            panic!("normal prior on mu expected")
        };
        for theta in [[15.2, 1.0, 0.8], [14.6, 0.7, 1.1], [15.3, 1.4, 0.5]] {
            let (mu, sp2, sm2) = (theta[0], theta[1] * theta[1], theta[2] * theta[2]);
            // (1, 1) is an eigenvector of the pair covariance
            let pair_w = 1.0 / (2.0 * sp2 + sm2);
            let grad_lik: f64 = data
                .records
                .iter()
                .map(|r| match r.x2 {
                    None => (r.x1 - mu) / (sp2 + sm2),
                    Some(x2) => pair_w * ((r.x1 - mu) + (x2 - mu)),
                })
                .sum();
            let analytic = grad_lik - (mu - mean) / (sd * sd);
            let u = spec.unconstrain(&theta);
            let h = 1e-4;
            let mut up = u.clone();
            up[0] += h;
            let mut dn = u.clone();
            dn[0] -= h;
            let fd = (post.log_density_unconstrained(&up) - post.log_density_unconstrained(&dn)) / (2.0 * h);
            assert_relative_eq!(fd, analytic, max_relative = 1e-5);
        }
    }

    #[test]
    fn doubling_data_doubles_the_data_term() {
        let data = table1_style(500, 5);
        let mut doubled = data.clone();
        doubled.records.extend(data.records.iter().cloned());
        let spec = ModelSpec::new(ModelId::B);
        let q = Marginalizer::new(32, QuadratureMode::Auto).unwrap();
        let theta = [15.0, 1.0, 0.7, 6.0];
        let one = StratumPosterior {
            spec: &spec,
            data: &data,
            marginalizer: &q,
        }
        .log_likelihood(&theta);
        let two = StratumPosterior {
            spec: &spec,
            data: &doubled,
            marginalizer: &q,
        }
        .log_likelihood(&theta);
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-14);
    }

    #[test]
    fn record_order_does_not_matter() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let data = table1_style(800, 8);
        let mut shuffled = data.clone();
        shuffled.records.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let spec = ModelSpec::new(ModelId::D);
        let q = Marginalizer::new(32, QuadratureMode::Auto).unwrap();
        let theta = [14.5, 1.2, 1.5, 0.8, 5.0];
        let a = StratumPosterior {
            spec: &spec,
            data: &data,
            marginalizer: &q,
        }
        .log_density(&theta);
        let b = StratumPosterior {
            spec: &spec,
            data: &shuffled,
            marginalizer: &q,
        }
        .log_density(&theta);
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }
}
