//! Synthetic datasets with conditional retesting.
//!
//! Every record draws from its own ChaCha8 stream (`seed`, stream = record id),
//! so a record's values do not depend on generation order or on how many other
//! records are generated. Generation runs in parallel and is returned sorted
//! by id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::ModelId;
use crate::error::{Error, Result};
use crate::stats::{DensityKind, MeasurementDensity};

/// One individual's first measurement and, when the retest happened, the
/// second one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPair {
    pub id: u64,
    pub stratum: String,
    pub x1: f64,
    pub x2: Option<f64>,
    pub cutoff: f64,
}

impl MeasurementPair {
    pub fn is_complete(&self) -> bool {
        self.x2.is_some()
    }

    /// Observed measurements in order.
    pub fn measurements(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.x1).chain(self.x2)
    }
}

/// Retest below `cutoff` with probability e^{−rate·(cutoff − x1)}; `rate = 0`
/// is the hard cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetestPolicy {
    pub cutoff: f64,
    pub rate: f64,
}

impl RetestPolicy {
    pub fn new(cutoff: f64, rate: f64) -> Result<Self> {
        if !(cutoff.is_finite() && cutoff > 0.0) {
            return Err(Error::domain(format!("cutoff must be positive, got {cutoff}")));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::domain(format!("recheck rate must be finite and >= 0, got {rate}")));
        }
        Ok(Self { cutoff, rate })
    }

    pub fn hard(cutoff: f64) -> Result<Self> {
        Self::new(cutoff, 0.0)
    }
}

pub fn recheck_probability(x1: f64, policy: &RetestPolicy) -> Result<f64> {
    if policy.rate < 0.0 || policy.rate.is_nan() {
        return Err(Error::domain(format!("recheck rate must be >= 0, got {}", policy.rate)));
    }
    if x1 >= policy.cutoff {
        Ok(0.0)
    } else if policy.rate == 0.0 {
        Ok(1.0)
    } else {
        Ok((-policy.rate * (policy.cutoff - x1)).exp())
    }
}

/// Everything needed to generate one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub stratum: String,
    /// Distribution of the latent true level.
    pub population: MeasurementDensity,
    /// Zero-located error distribution; `None` means error-free measurement.
    pub measurement: Option<MeasurementDensity>,
    pub policy: RetestPolicy,
    pub n: usize,
    pub seed: u64,
    /// Id assigned to the first record; ids are consecutive from here.
    #[serde(default)]
    pub first_id: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("n must be at least 1"));
        }
        if let Some(m) = &self.measurement {
            if m.location() != 0.0 {
                return Err(Error::domain(format!(
                    "measurement error must be located at 0, got {}",
                    m.location()
                )));
            }
        }
        RetestPolicy::new(self.policy.cutoff, self.policy.rate)?;
        Ok(())
    }
}

fn record_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn simulate_pairs(spec: &GeneratorSpec) -> Result<Vec<MeasurementPair>> {
    spec.validate()?;
    let draw_error = |rng: &mut ChaCha8Rng| spec.measurement.as_ref().map_or(0.0, |m| m.sample(rng));
    let out = (0..spec.n as u64)
        .into_par_iter()
        .map(|k| {
            let id = spec.first_id + k;
            let mut rng = record_rng(spec.seed, id);
            let truth = spec.population.sample(&mut rng);
            let x1 = truth + draw_error(&mut rng);
            let p = recheck_probability(x1, &spec.policy).expect("policy validated");
            let u: f64 = rng.random();
            let x2 = (u < p).then(|| truth + draw_error(&mut rng));
            MeasurementPair {
                id,
                stratum: spec.stratum.clone(),
                x1,
                x2,
                cutoff: spec.policy.cutoff,
            }
        })
        .collect();
    Ok(out)
}

/// Generating parameters for one stratum of a model a–d dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDgp {
    pub stratum: String,
    pub cutoff: f64,
    pub population: MeasurementDensity,
    pub measurement: MeasurementDensity,
}

/// Reference generating parameters for each model, strata "M" (cutoff 13) and
/// "F" (cutoff 12.5).
pub fn reference_dgp(model: ModelId) -> Vec<StratumDgp> {
    let mk = |stratum: &str, cutoff: f64, population: MeasurementDensity, measurement: MeasurementDensity| StratumDgp {
        stratum: stratum.to_string(),
        cutoff,
        population,
        measurement,
    };
    let n = |m, s| MeasurementDensity::normal(m, s).unwrap();
    let t = |s| MeasurementDensity::student_t(0.0, s, 5.0).unwrap();
    match model {
        ModelId::A => vec![
            mk("M", 13.0, n(14.8, 0.55), n(0.0, 0.55)),
            mk("F", 12.5, n(13.8, 0.60), n(0.0, 0.55)),
        ],
        ModelId::B => vec![
            mk("M", 13.0, n(14.8, 0.55), t(0.55)),
            mk("F", 12.5, n(13.8, 0.60), t(0.55)),
        ],
        ModelId::C => vec![
            mk("M", 13.0, n(14.8, 0.55), MeasurementDensity::normal_mixture(0.0, 0.8, 0.45, 2.0).unwrap()),
            mk("F", 12.5, n(13.8, 0.60), MeasurementDensity::normal_mixture(0.0, 0.8, 0.45, 2.2).unwrap()),
        ],
        ModelId::D => vec![
            mk("M", 13.0, MeasurementDensity::skew_normal(14.8, 0.55, 5.0).unwrap(), t(0.55)),
            mk("F", 12.5, MeasurementDensity::skew_normal(13.8, 0.60, -5.0).unwrap(), t(0.55)),
        ],
    }
}

fn family_matches(model: ModelId, p: &StratumDgp) -> bool {
    let pop_normal = matches!(p.population.kind(), DensityKind::Normal { .. });
    let pop_skew = matches!(p.population.kind(), DensityKind::SkewNormal { .. });
    match (model, p.measurement.kind()) {
        (ModelId::A, DensityKind::Normal { .. }) => pop_normal,
        (ModelId::B, DensityKind::StudentT { .. }) => pop_normal,
        (ModelId::C, DensityKind::NormalMixture { .. }) => pop_normal,
        (ModelId::D, DensityKind::StudentT { .. }) => pop_skew,
        _ => false,
    }
}

/// Stratified dataset from one of the four generating processes with hard
/// retesting at each stratum's cutoff. `n_per_stratum` records per stratum;
/// ids are unique across strata.
pub fn simulate_dgp(model: ModelId, strata: &[StratumDgp], n_per_stratum: usize, seed: u64) -> Result<Vec<MeasurementPair>> {
    let mut out = Vec::with_capacity(strata.len() * n_per_stratum);
    for (k, p) in strata.iter().enumerate() {
        if !family_matches(model, p) {
            return Err(Error::domain(format!(
                "stratum {} parameters do not match model {model}",
                p.stratum
            )));
        }
        let spec = GeneratorSpec {
            stratum: p.stratum.clone(),
            population: p.population,
            measurement: Some(p.measurement),
            policy: RetestPolicy::hard(p.cutoff)?,
            n: n_per_stratum,
            seed,
            first_id: (k * n_per_stratum) as u64,
        };
        out.extend(simulate_pairs(&spec)?);
    }
    Ok(out)
}
