//! Gauss–Hermite quadrature for expectations under the standard Gaussian.
//!
//! Nodes and weights are for the weight function `e^{-x²/2}/√(2π)`, so the
//! weights sum to one and `expect(f) ≈ E f(G)` with `G ~ N(0, 1)`.
//! Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix, are
//! polished by Newton steps on the orthonormal Hermite polynomial, and are
//! mirrored so the rule is exactly symmetric. Weights use the Christoffel
//! form `1 / Σ_{k<n} h_k(x)²`, which keeps tail weights relatively accurate.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone)]
pub struct GaussHermite {
    /// Non-negative nodes in increasing order (0 included once when `n` is odd).
    half_nodes: Vec<f64>,
    half_weights: Vec<f64>,
    n: usize,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j {
                (j as f64).sqrt()
            } else if j + 1 == i {
                (i as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut eig: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().cloned().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let half = n / 2;
        let mut half_nodes = Vec::with_capacity(half + 1);
        if n % 2 == 1 {
            half_nodes.push(0.0);
        }
        for i in 0..half {
            // symmetrize the eigenvalue pair, then polish
            let hi = eig[n - 1 - (half - 1 - i)];
            let lo = eig[half - 1 - i];
            let x0 = 0.5 * (hi - lo);
            half_nodes.push(newton_polish(n, x0));
        }
        let half_weights = half_nodes.iter().map(|&x| christoffel_weight(n, x)).collect();
        Self { half_nodes, half_weights, n }
    }

    /// Shared rule for `n` nodes, built once per process.
    pub fn cached(n: usize) -> Arc<GaussHermite> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard.entry(n).or_insert_with(|| Arc::new(GaussHermite::new(n))).clone()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// All nodes in increasing order.
    pub fn nodes(&self) -> Vec<f64> {
        self.pairs().map(|(x, _)| x).collect::<Vec<_>>()
    }

    /// All weights, aligned with [`GaussHermite::nodes`].
    pub fn weights(&self) -> Vec<f64> {
        self.pairs().map(|(_, w)| w).collect::<Vec<_>>()
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let odd = self.n % 2 == 1;
        let neg = self
            .half_nodes
            .iter()
            .zip(&self.half_weights)
            .rev()
            .filter(move |(x, _)| !(odd && **x == 0.0))
            .map(|(x, w)| (-x, *w));
        let pos = self.half_nodes.iter().cloned().zip(self.half_weights.iter().cloned());
        neg.chain(pos)
    }

    /// `E f(G)` approximated by the rule. Mirrored nodes are summed as pairs
    /// so that odd integrands cancel exactly.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let mut acc = 0.0;
        for (&x, &w) in self.half_nodes.iter().zip(&self.half_weights) {
            if x == 0.0 {
                acc += w * f(0.0);
            } else {
                acc += w * (f(x) + f(-x));
            }
        }
        acc
    }
}

impl GaussHermite {
    /// Vector-valued [`GaussHermite::expect`]: `f(x, out)` adds nothing itself,
    /// it fills `out` with the integrand values at `x`.
    pub fn expect_many<F: FnMut(f64, &mut [f64])>(&self, len: usize, mut f: F) -> Vec<f64> {
        let mut acc = vec![0.0; len];
        let mut plus = vec![0.0; len];
        let mut minus = vec![0.0; len];
        for (&x, &w) in self.half_nodes.iter().zip(&self.half_weights) {
            f(x, &mut plus);
            if x == 0.0 {
                acc.iter_mut().zip(&plus).for_each(|(a, p)| *a += w * p);
            } else {
                f(-x, &mut minus);
                acc.iter_mut().zip(plus.iter().zip(&minus)).for_each(|(a, (p, m))| *a += w * (p + m));
            }
        }
        acc
    }
}

/// Runs the orthonormal recurrence up to degree `n` with periodic rescaling.
/// Returns `(h_n, h_{n−1}, Σ_{k<n} h_k², log_scale)` where the true values
/// are the first two times `e^{log_scale}` and the sum times `e^{2·log_scale}`.
fn scaled_recurrence(n: usize, x: f64) -> (f64, f64, f64, f64) {
    const BIG: f64 = 1e150;
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum = 0.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        sum += cur * cur;
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            prev /= BIG;
            cur /= BIG;
            sum /= BIG * BIG;
            log_scale += BIG.ln();
        }
    }
    (cur, prev, sum, log_scale)
}

fn newton_polish(n: usize, mut x: f64) -> f64 {
    for _ in 0..8 {
        let (hn, hn1, _, _) = scaled_recurrence(n, x);
        let dhn = (n as f64).sqrt() * hn1;
        if dhn == 0.0 || !dhn.is_finite() {
            break;
        }
        let step = hn / dhn;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

fn christoffel_weight(n: usize, x: f64) -> f64 {
    let (_, _, sum, log_scale) = scaled_recurrence(n, x);
    (-2.0 * log_scale).exp() / sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for n in [1, 2, 5, 20, 201] {
            let q = GaussHermite::new(n);
            let s: f64 = q.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n}, sum={s}");
            assert_eq!(q.nodes().len(), n);
        }
    }

    #[test]
    fn low_moments_are_exact() {
        let q = GaussHermite::new(201);
        assert!((q.expect(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((q.expect(|x| x.powi(4)) - 3.0).abs() < 1e-12);
        assert!((q.expect(|x| x.powi(6)) - 15.0).abs() < 1e-11);
        assert_eq!(q.expect(|x| x.powi(3)), 0.0);
    }

    #[test]
    fn two_point_rule() {
        let q = GaussHermite::new(2);
        let nodes = q.nodes();
        assert!((nodes[0] + 1.0).abs() < 1e-15 && (nodes[1] - 1.0).abs() < 1e-15);
    }
}
