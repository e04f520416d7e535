//! Frequentist estimators of the population and measurement variance from
//! conditionally repeated pairs, assuming normal levels and normal errors.
//!
//! All three estimators take μ̂ and σ̂²_total from every first measurement and
//! differ only in how they obtain ρ = σ²_pop / σ²_total.

mod bootstrap;
mod study;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::MeasurementPair;
use crate::stats::std_normal_lambda;

pub use bootstrap::{bootstrap, BootstrapSummary, ParamInterval};
pub use study::{naive_bias_curve, recheck_study, BiasCurvePoint, RecheckRow, StudyDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    ConditionalExpectation,
    Mle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Naive => "naive",
            Method::ConditionalExpectation => "ce",
            Method::Mle => "mle",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "ce" | "conditional_expectation" => Ok(Method::ConditionalExpectation),
            "mle" => Ok(Method::Mle),
            other => Err(Error::domain(format!("unknown method '{other}' (expected naive, ce or mle)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequentistEstimate {
    pub method: Method,
    pub mu_hat: f64,
    pub sigma_total_sq_hat: f64,
    pub rho_hat: f64,
    pub sigma_pop_sq_hat: f64,
    pub sigma_meas_sq_hat: f64,
    pub n_pairs: usize,
    pub n_total: usize,
    /// The raw ρ̂ fell outside [0, 1] and was clamped.
    pub clamped: bool,
}

impl FrequentistEstimate {
    /// Splits σ̂²_total by ρ̂, clamping ρ̂ into [0, 1]. With zero total
    /// variance both components are zero and ρ̂ is reported as 1.
    fn decompose(method: Method, mu_hat: f64, total: f64, raw_rho: f64, n_pairs: usize, n_total: usize) -> Self {
        let (rho, clamped) = if total == 0.0 {
            (1.0, false)
        } else if raw_rho < 0.0 {
            (0.0, true)
        } else if raw_rho > 1.0 {
            (1.0, true)
        } else {
            (raw_rho, false)
        };
        let pop = rho * total;
        Self {
            method,
            mu_hat,
            sigma_total_sq_hat: total,
            rho_hat: rho,
            sigma_pop_sq_hat: pop,
            sigma_meas_sq_hat: total - pop,
            n_pairs,
            n_total,
            clamped,
        }
    }
}

fn complete_pairs(records: &[MeasurementPair]) -> impl Iterator<Item = (f64, f64)> + '_ {
    records.iter().filter_map(|r| r.x2.map(|x2| (r.x1, x2)))
}

fn require_pairs(records: &[MeasurementPair]) -> Result<usize> {
    let n = complete_pairs(records).count();
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "complete pairs",
            needed: 2,
            got: n,
        });
    }
    Ok(n)
}

/// Sample mean and unbiased variance of every first measurement.
pub fn sample_mean_var(records: &[MeasurementPair]) -> Result<(f64, f64)> {
    if records.len() < 2 {
        return Err(Error::InsufficientData {
            what: "records",
            needed: 2,
            got: records.len(),
        });
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.x1).sum::<f64>() / n;
    let var = records.iter().map(|r| (r.x1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Half the sample variance of x1 − x2 over complete pairs. Biased low when
/// retesting depends on x1.
pub fn naive_sigma_meas_sq(records: &[MeasurementPair]) -> Result<f64> {
    let n = require_pairs(records)? as f64;
    let mean = complete_pairs(records).map(|(a, b)| a - b).sum::<f64>() / n;
    let ss = complete_pairs(records).map(|(a, b)| (a - b - mean).powi(2)).sum::<f64>();
    Ok(ss / (n - 1.0) / 2.0)
}

/// Amount by which the naive estimator underestimates σ²_meas under a hard
/// cutoff: σ⁴_meas (αλ + λ²) / (2σ²_total).
pub fn theoretical_naive_bias(mu: f64, sigma_pop: f64, sigma_meas: f64, cutoff: f64) -> Result<f64> {
    if !(sigma_pop > 0.0 && sigma_meas > 0.0) || !sigma_pop.is_finite() || !sigma_meas.is_finite() {
        return Err(Error::domain(format!(
            "scales must be positive and finite (sigma_pop={sigma_pop}, sigma_meas={sigma_meas})"
        )));
    }
    let total = sigma_pop * sigma_pop + sigma_meas * sigma_meas;
    if cutoff == f64::INFINITY {
        return Ok(0.0);
    }
    let tf = std_normal_lambda((cutoff - mu) / total.sqrt())?;
    Ok(sigma_meas.powi(4) / (2.0 * total) * tf.variance_shrinkage())
}

pub fn estimate_naive(records: &[MeasurementPair]) -> Result<FrequentistEstimate> {
    let (mu, total) = sample_mean_var(records)?;
    let n_pairs = require_pairs(records)?;
    let meas = naive_sigma_meas_sq(records)?;
    let rho = if total > 0.0 { 1.0 - meas / total } else { 1.0 };
    Ok(FrequentistEstimate::decompose(Method::Naive, mu, total, rho, n_pairs, records.len()))
}

/// Conditional-expectation estimator: ρ̂ = 1 − (x̄₂ − x̄₁) / (σ̂_total λ̂) over
/// retested records, with λ̂ at α̂ = (c − μ̂)/σ̂_total. Needs the cutoff.
pub fn estimate_rho_ce(records: &[MeasurementPair], cutoff: Option<f64>) -> Result<FrequentistEstimate> {
    let Some(c) = cutoff else {
        return Err(Error::Unsupported(
            "the conditional-expectation estimator needs the retest cutoff".into(),
        ));
    };
    let (mu, total) = sample_mean_var(records)?;
    let n_pairs = require_pairs(records)?;
    let n = n_pairs as f64;
    let (s1, s2) = complete_pairs(records).fold((0.0, 0.0), |(a, b), (x1, x2)| (a + x1, b + x2));
    let rho = if total > 0.0 { ce_rho(mu, total, c, (s2 - s1) / n)? } else { 1.0 };
    Ok(FrequentistEstimate::decompose(
        Method::ConditionalExpectation,
        mu,
        total,
        rho,
        n_pairs,
        records.len(),
    ))
}

/// 1 − shift / (σ_total λ) where shift = E[x₂ | retest] − E[x₁ | retest].
fn ce_rho(mu: f64, total: f64, cutoff: f64, shift: f64) -> Result<f64> {
    let sd = total.sqrt();
    let tf = std_normal_lambda((cutoff - mu) / sd)?;
    Ok(1.0 - shift / (sd * tf.lambda))
}

/// Standardized second moments of complete pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub m11: f64,
    pub m20: f64,
    pub m02: f64,
}

impl PairMoments {
    pub fn from_records(records: &[MeasurementPair], mu: f64, sigma_total: f64) -> Self {
        let mut m = PairMoments {
            m11: 0.0,
            m20: 0.0,
            m02: 0.0,
        };
        let mut n = 0usize;
        for (x1, x2) in complete_pairs(records) {
            let a = (x1 - mu) / sigma_total;
            let b = (x2 - mu) / sigma_total;
            m.m11 += a * b;
            m.m20 += a * a;
            m.m02 += b * b;
            n += 1;
        }
        let n = n.max(1) as f64;
        m.m11 /= n;
        m.m20 /= n;
        m.m02 /= n;
        m
    }

    /// The score ρ³ − (1 + ρ²) m₁₁ + ρ (m₂₀ + m₀₂ − 1).
    pub fn score(&self, rho: f64) -> f64 {
        rho * rho * rho - (1.0 + rho * rho) * self.m11 + rho * (self.m20 + self.m02 - 1.0)
    }

    /// Per-pair bivariate normal log-likelihood of the standardized pairs,
    /// up to constants. At |ρ| = 1 it is +∞ when the pairs lie on the line
    /// and −∞ otherwise.
    pub fn log_likelihood(&self, rho: f64) -> f64 {
        let q = self.m20 - 2.0 * rho * self.m11 + self.m02;
        let one_minus = 1.0 - rho * rho;
        if one_minus <= 1e-14 {
            return if q.abs() <= 1e-12 { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        -0.5 * one_minus.ln() - q / (2.0 * one_minus)
    }

    /// Real roots of the score inside [−1, 1].
    pub fn admissible_roots(&self) -> Vec<f64> {
        real_cubic_roots(-self.m11, self.m20 + self.m02 - 1.0, -self.m11)
            .into_iter()
            .filter(|r| r.abs() <= 1.0 + 1e-9)
            .map(|r| r.clamp(-1.0, 1.0))
            .collect()
    }
}

/// Real roots of t³ + b t² + c t + d, polished by Newton steps.
pub(crate) fn real_cubic_roots(b: f64, c: f64, d: f64) -> Vec<f64> {
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let shift = -b / 3.0;
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else if p == 0.0 {
        vec![shift]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| r * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    };
    for t in &mut roots {
        for _ in 0..4 {
            let f = ((*t + b) * *t + c) * *t + d;
            let df = (3.0 * *t + 2.0 * b) * *t + c;
            if df == 0.0 {
                break;
            }
            let step = f / df;
            *t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
    }
    roots
}

/// Maximum-likelihood ρ̂ from the score of the bivariate normal pairs, with
/// μ and σ_total fixed at their sample values. The cutoff does not enter.
/// Among admissible roots the one with the highest likelihood wins; ties go
/// to the root closest to m₁₁.
pub fn estimate_rho_mle(records: &[MeasurementPair]) -> Result<FrequentistEstimate> {
    let (mu, total) = sample_mean_var(records)?;
    let n_pairs = require_pairs(records)?;
    if total == 0.0 {
        return Ok(FrequentistEstimate::decompose(Method::Mle, mu, total, 1.0, n_pairs, records.len()));
    }
    let m = PairMoments::from_records(records, mu, total.sqrt());
    let rho = select_root(&m)?;
    Ok(FrequentistEstimate::decompose(Method::Mle, mu, total, rho, n_pairs, records.len()))
}

fn select_root(m: &PairMoments) -> Result<f64> {
    let roots = m.admissible_roots();
    let best = roots.iter().copied().max_by(|&a, &b| {
        m.log_likelihood(a)
            .total_cmp(&m.log_likelihood(b))
            .then_with(|| (b - m.m11).abs().total_cmp(&(a - m.m11).abs()))
    });
    best.filter(|r| r.is_finite()).ok_or(Error::NoAdmissibleRoot {
        m11: m.m11,
        m20: m.m20,
        m02: m.m02,
    })
}

/// Dispatches on `method`; `cutoff` is used only by the conditional
/// expectation estimator.
pub fn estimate(records: &[MeasurementPair], method: Method, cutoff: Option<f64>) -> Result<FrequentistEstimate> {
    match method {
        Method::Naive => estimate_naive(records),
        Method::ConditionalExpectation => estimate_rho_ce(records, cutoff),
        Method::Mle => estimate_rho_mle(records),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_pairs, GeneratorSpec, RetestPolicy};
    use crate::stats::MeasurementDensity;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rec(id: u64, x1: f64, x2: Option<f64>) -> MeasurementPair {
        MeasurementPair {
            id,
            stratum: "all".into(),
            x1,
            x2,
            cutoff: 13.0,
        }
    }

    fn table1(n: usize, seed: u64, cutoff: f64) -> Vec<MeasurementPair> {
        simulate_pairs(&GeneratorSpec {
            stratum: "all".into(),
            population: MeasurementDensity::normal(15.0, 1.0).unwrap(),
            measurement: Some(MeasurementDensity::normal(0.0, 0.8).unwrap()),
            policy: RetestPolicy::hard(cutoff).unwrap(),
            n,
            seed,
            first_id: 0,
        })
        .unwrap()
    }

    #[test]
    fn mean_var_small_cases() {
        let r = [rec(0, 14.0, None), rec(1, 16.0, None)];
        assert_eq!(sample_mean_var(&r).unwrap(), (15.0, 2.0));
        let c = [rec(0, 14.0, None), rec(1, 14.0, None), rec(2, 14.0, None)];
        assert_eq!(sample_mean_var(&c).unwrap().1, 0.0);
        assert!(sample_mean_var(&r[..1]).is_err());
    }

    #[test]
    fn table1_mean_and_total_variance() {
        let d = table1(10_000, 1, 13.0);
        let (m, v) = sample_mean_var(&d).unwrap();
        let se_m = (1.64f64 / 1e4).sqrt();
        let se_v = 1.64 * (2.0f64 / 1e4).sqrt();
        assert!((m - 15.0).abs() < 3.0 * se_m, "{m}");
        assert!((v - 1.64).abs() < 3.0 * se_v, "{v}");
    }

    #[test]
    fn naive_is_zero_for_identical_pairs() {
        let r = [rec(0, 12.0, Some(12.0)), rec(1, 12.5, Some(12.5)), rec(2, 14.0, None)];
        assert_eq!(naive_sigma_meas_sq(&r).unwrap(), 0.0);
        assert!(naive_sigma_meas_sq(&r[..1]).is_err());
    }

    #[test]
    fn naive_without_truncation_recovers_sigma_meas() {
        let d = table1(1_000_000, 2, f64::MAX);
        let v = naive_sigma_meas_sq(&d).unwrap();
        // SE of a variance estimate with 10⁶ pairs
        let se = 0.64 * (2.0f64 / 1e6).sqrt();
        assert!((v - 0.64).abs() < 4.0 * se, "{v}");
    }

    #[test]
    fn naive_under_truncation_matches_theory() {
        let bias = theoretical_naive_bias(15.0, 1.0, 0.8, 13.0).unwrap();
        assert_relative_eq!(bias, 0.10683074086373332, max_relative = 1e-12);
        let d = table1(400_000, 3, 13.0);
        let n_pairs = d.iter().filter(|r| r.x2.is_some()).count() as f64;
        let v = naive_sigma_meas_sq(&d).unwrap();
        let expected = 0.64 - bias;
        let se = 2.0 * expected * (2.0 / n_pairs).sqrt() / 2.0;
        assert!((v - expected).abs() < 3.0 * se, "{v} vs {expected} (se {se})");
    }

    #[test]
    fn theoretical_bias_limits() {
        assert_eq!(theoretical_naive_bias(15.0, 1.0, 0.8, f64::INFINITY).unwrap(), 0.0);
        assert!(theoretical_naive_bias(15.0, 1.0, 0.8, 40.0).unwrap() < 1e-12);
        assert!(theoretical_naive_bias(15.0, 1.0, 1e-5, 13.0).unwrap() < 1e-19);
        assert!(theoretical_naive_bias(15.0, 0.0, 0.8, 13.0).is_err());
        assert!(theoretical_naive_bias(15.0, 1.0, -0.8, 13.0).is_err());
    }

    #[test]
    fn ce_needs_cutoff() {
        let d = table1(2000, 4, 13.0);
        assert!(matches!(estimate_rho_ce(&d, None), Err(Error::Unsupported(_))));
    }

    #[test]
    fn ce_zero_shift_gives_rho_one() {
        let r = [
            rec(0, 12.0, Some(12.0)),
            rec(1, 12.5, Some(12.5)),
            rec(2, 14.0, None),
            rec(3, 15.0, None),
        ];
        let e = estimate_rho_ce(&r, Some(13.0)).unwrap();
        assert_eq!(e.rho_hat, 1.0);
        assert_eq!(e.sigma_meas_sq_hat, 0.0);
    }

    #[test]
    fn ce_population_conditional_means() {
        // exact truncated-normal conditional means recover ρ
        let sd = 1.64f64.sqrt();
        let lambda = std_normal_lambda((13.0 - 15.0) / sd).unwrap().lambda;
        let rho = 1.0 / 1.64;
        let m1 = 15.0 - sd * lambda;
        let m2 = 15.0 - rho * sd * lambda;
        assert_relative_eq!(m2 - m1, 0.9951833912462153, max_relative = 1e-12);
        let r = ce_rho(15.0, 1.64, 13.0, m2 - m1).unwrap();
        assert_relative_eq!(r, 0.6097560975609756, max_relative = 1e-12);
    }

    #[test]
    fn mle_identical_pairs_gives_one() {
        let m = PairMoments {
            m11: 1.0,
            m20: 1.0,
            m02: 1.0,
        };
        assert_eq!(m.admissible_roots().len(), 1);
        assert_relative_eq!(select_root(&m).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cubic_roots_known_polynomials() {
        // (t − 0.5)(t + 0.25)(t − 2)
        let mut r = real_cubic_roots(-2.25, 0.375, 0.25);
        r.sort_by(f64::total_cmp);
        for (a, b) in r.iter().zip([-0.25, 0.5, 2.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        // (t − 1)(t² + 1)
        let r = real_cubic_roots(-1.0, 1.0, -1.0);
        assert_eq!(r.len(), 1);
        assert_relative_eq!(r[0], 1.0, epsilon = 1e-12);
        // triple root at 0.3
        let r = real_cubic_roots(-0.9, 0.27, -0.027);
        assert!(r.iter().all(|t| (t - 0.3).abs() < 1e-4));
    }

    #[test]
    fn table1_estimates_near_truth() {
        let d = table1(10_000, 5, 13.0);
        for e in [estimate_rho_ce(&d, Some(13.0)).unwrap(), estimate_rho_mle(&d).unwrap()] {
            assert!((e.sigma_pop_sq_hat - 1.0).abs() < 0.15, "{e:?}");
            assert!((e.sigma_meas_sq_hat - 0.64).abs() < 0.12, "{e:?}");
        }
    }

    #[test]
    fn mle_matches_pearson_without_truncation() {
        let d = table1(100_000, 6, f64::MAX);
        let e = estimate_rho_mle(&d).unwrap();
        let (mu, var) = sample_mean_var(&d).unwrap();
        let m = PairMoments::from_records(&d, mu, var.sqrt());
        let pearson = m.m11 / (m.m20 * m.m02).sqrt();
        assert!((e.rho_hat - pearson).abs() < 0.01, "{} vs {pearson}", e.rho_hat);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Naive, Method::ConditionalExpectation, Method::Mle] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("ols".parse::<Method>().is_err());
    }

    fn arb_records() -> impl Strategy<Value = Vec<MeasurementPair>> {
        prop::collection::vec((10.0f64..18.0, prop::option::of(-2.0f64..2.0)), 6..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (x1, d))| rec(i as u64, x1, d.map(|d| x1 + d)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn decomposition_identity(records in arb_records()) {
            for method in [Method::Naive, Method::ConditionalExpectation, Method::Mle] {
                if let Ok(e) = estimate(&records, method, Some(13.0)) {
                    prop_assert!((e.sigma_pop_sq_hat + e.sigma_meas_sq_hat - e.sigma_total_sq_hat).abs()
                        <= 1e-12 * e.sigma_total_sq_hat.max(1.0));
                    prop_assert!((0.0..=1.0).contains(&e.rho_hat));
                    prop_assert!(e.sigma_meas_sq_hat >= -1e-12);
                }
            }
        }

        #[test]
        fn mle_ignores_the_cutoff_field(records in arb_records(), c in 5.0f64..25.0) {
            let moved: Vec<_> = records.iter().cloned().map(|mut r| { r.cutoff = c; r }).collect();
            let a = estimate_rho_mle(&records);
            let b = estimate_rho_mle(&moved);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "outcome changed with the cutoff"),
            }
        }

        #[test]
        fn selected_root_solves_the_score(m11 in -1.0f64..1.0, m20 in 0.0f64..3.0, m02 in 0.0f64..3.0) {
            // Cauchy–Schwarz keeps the moments consistent
            prop_assume!(m11 * m11 <= m20 * m02);
            let m = PairMoments { m11, m20, m02 };
            let r = select_root(&m).unwrap();
            prop_assert!(r.abs() <= 1.0);
            prop_assert!(m.score(r).abs() < 1e-9);
        }

        #[test]
        fn estimates_ignore_record_order(records in arb_records(), k in 0usize..1000) {
            let mut rotated = records.clone();
            let len = rotated.len();
            rotated.rotate_left(k % len);
            for method in [Method::Naive, Method::ConditionalExpectation, Method::Mle] {
                if let (Ok(a), Ok(b)) = (estimate(&records, method, Some(13.0)), estimate(&rotated, method, Some(13.0))) {
                    prop_assert!((a.rho_hat - b.rho_hat).abs() < 1e-9);
                }
            }
        }
    }
}
