use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss–Hermite rule for ∫ e^{−x²} f(x) dx (physicists' weight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ wᵢ f(xᵢ)
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix (implicit QL with Wilkinson
/// shifts). `diag` is overwritten with the eigenvalues, `off[i]` couples rows
/// i and i+1.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &[f64]) -> Result<()> {
    let n = diag.len();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::domain("tridiagonal eigenvalue iteration did not converge"));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Orthonormal Hermite values p_{n-1}(x), p_n(x) for the weight e^{−x²}, plus
/// Σ_{k<n} p_k(x)².
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut sum_sq = cur * cur;
    for k in 1..=n {
        let a_k = (k as f64 / 2.0).sqrt();
        let a_km1 = ((k - 1) as f64 / 2.0).sqrt();
        let next = (x * cur - a_km1 * prev) / a_k;
        prev = cur;
        cur = next;
        if k < n {
            sum_sq += cur * cur;
        }
    }
    (prev, cur, sum_sq)
}

/// Gauss–Hermite nodes and weights for 2 ≤ n ≤ 256.
///
/// Nodes are the eigenvalues of the Jacobi matrix (Golub–Welsch), polished by
/// Newton steps on the orthonormal recurrence; weights come from the
/// Christoffel sum 1 / Σ_{k<n} p_k(x)², which keeps relative accuracy for the
/// tiny outer weights.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if !(2..=256).contains(&n) {
        return Err(Error::domain(format!("Gauss-Hermite order must be in [2, 256], got {n}")));
    }
    let mut diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    tridiagonal_eigenvalues(&mut diag, &off)?;
    diag.sort_by(|a, b| a.total_cmp(b));

    let scale = (2.0 * n as f64).sqrt();
    for x in diag.iter_mut() {
        for _ in 0..3 {
            let (pm1, pn, _) = orthonormal_hermite(n, *x);
            // p_n'(x) = sqrt(2n) p_{n-1}(x)
            let step = pn / (scale * pm1);
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // exact symmetry about zero
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let m = 0.5 * (diag[j] - diag[i]);
        diag[i] = -m;
        diag[j] = m;
    }
    if n % 2 == 1 {
        diag[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = diag.iter().map(|&x| 1.0 / orthonormal_hermite(n, x).2).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    Ok(QuadratureRule { nodes: diag, weights })
}
