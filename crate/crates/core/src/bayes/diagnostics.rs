//! Convergence diagnostics over multiple chains of one scalar quantity.

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Split-R̂: each chain is halved and the potential scale reduction is
/// computed over the 2m halves. Returns NaN with fewer than 4 draws per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return f64::NAN;
    }
    let half = n / 2;
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect();
    let stats: Vec<(f64, f64)> = pieces.iter().map(|p| mean_var(p)).collect();
    let m = stats.len() as f64;
    let nh = half as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = nh / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nh - 1.0) / nh * w + b / nh;
    (var_plus / w).sqrt()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// truncation of the autocorrelations.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return f64::NAN;
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(&c[..n])).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b_over_n = if chains.len() > 1 {
        stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 {
        return m * nf;
    }
    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&stats)
            .map(|(c, s)| (0..n - lag).map(|t| (c[t] - s.0) * (c[t + lag] - s.0)).sum::<f64>() / nf)
            .sum::<f64>()
            / m
    };
    let rho = |lag: usize| 1.0 - (w * (nf - 1.0) / nf - autocov(lag)) / var_plus;
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = if lag == 0 { 1.0 + rho(1) } else { rho(lag) + rho(lag + 1) };
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        sum_pairs += pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (m * nf).log10().max(1.0));
    m * nf / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(seed: u64, m: usize, n: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|c| {
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z + shift * c as f64
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_look_converged() {
        let c = iid(1, 4, 1000, 0.0);
        let r = split_rhat(&c);
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let ess = effective_sample_size(&c);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
    }

    #[test]
    fn separated_chains_flagged() {
        let c = iid(2, 4, 500, 1.0);
        assert!(split_rhat(&c) > 1.1);
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with φ: τ = (1+φ)/(1−φ)
        let phi: f64 = 0.8;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..20_000)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x = phi * x + (1.0 - phi * phi).sqrt() * z;
                        x
                    })
                    .collect()
            })
            .collect();
        let ess = effective_sample_size(&chains);
        let want = 80_000.0 * (1.0 - phi) / (1.0 + phi);
        assert!((ess / want - 1.0).abs() < 0.15, "{ess} vs {want}");
    }

    #[test]
    fn too_short_is_nan() {
        assert!(split_rhat(&[vec![1.0, 2.0]]).is_nan());
        assert!(effective_sample_size(&[]).is_nan());
    }
}
