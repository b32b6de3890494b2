//! Slow reference computations used only by tests.
//!
//! Nothing here depends on the `tensornet` crate: quantities are computed
//! from their definitions (direct integration, Monte Carlo, brute force) so
//! they can check the closed forms used by the library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type Rows = [Vec<f64>];

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_j a_j z^j`, evaluated term by term.
pub fn poly_eval(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().enumerate().map(|(j, a)| a * z.powi(j as i32)).sum()
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Orthonormal Hermite polynomial from the explicit sum
/// `He_k(z) = k! Σ_m (−1)^m z^{k−2m} / (m! (k−2m)! 2^m)`, divided by `√k!`.
/// Only accurate for moderate `k` (say `k ≤ 20`).
pub fn hermite_explicit(k: u64, z: f64) -> f64 {
    let mut s = 0.0;
    for m in 0..=k / 2 {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * z.powi((k - 2 * m) as i32) / (factorial(m) * factorial(k - 2 * m) * 2f64.powi(m as i32));
    }
    s * factorial(k) / factorial(k).sqrt()
}

/// `E f(G)` for `G ~ N(0,1)` by the trapezoid rule on `[−L, L]`.
pub fn gaussian_expect_trapezoid<F: Fn(f64) -> f64>(f: F, half_width: f64, steps: usize) -> f64 {
    let h = 2.0 * half_width / steps as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for i in 0..=steps {
        let x = -half_width + i as f64 * h;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        acc += w * f(x) * (-0.5 * x * x).exp();
    }
    acc * h * norm
}

/// Monte Carlo estimate of a mean with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Estimate { mean, std_err: (var / n).sqrt() }
    }

    pub fn within(&self, value: f64, sigmas: f64) -> bool {
        (self.mean - value).abs() <= sigmas * self.std_err + 1e-12
    }
}

fn gaussian(rng: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn network_output<F: Fn(f64) -> f64>(rows: &Rows, sigma: &F, x: &[f64]) -> f64 {
    rows.iter().map(|w| sigma(dot(w, x))).sum()
}

/// Monte Carlo estimate of `E (Σ σ(⟨w_i,x⟩) − Σ σ(⟨ŵ_j,x⟩))²`.
pub fn mc_mse<F: Fn(f64) -> f64>(teacher: &Rows, student: &Rows, sigma: F, samples: usize, seed: u64) -> Estimate {
    let d = teacher[0].len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            let x = gaussian(&mut rng, d);
            let e = network_output(teacher, &sigma, &x) - network_output(student, &sigma, &x);
            e * e
        })
        .collect();
    Estimate::from_samples(&vals)
}

/// Monte Carlo estimate of `E σ(⟨u,x⟩)γ(⟨v,x⟩)`.
pub fn mc_pair_expectation<F: Fn(f64) -> f64, H: Fn(f64) -> f64>(u: &[f64], v: &[f64], sigma: F, gamma: H, samples: usize, seed: u64) -> Estimate {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            let x = gaussian(&mut rng, u.len());
            sigma(dot(u, &x)) * gamma(dot(v, &x))
        })
        .collect();
    Estimate::from_samples(&vals)
}

/// Empirical least-squares fit of `y` on `(1, ‖x‖²)`. Returns
/// `(a, b, residual risk)` where the risk is measured on a fresh sample.
pub fn mc_norm2_regression<F: Fn(f64) -> f64>(rows: &Rows, sigma: F, samples: usize, seed: u64) -> (f64, f64, Estimate) {
    let d = rows[0].len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut s_n, mut s_nn, mut s_y, mut s_ny) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let x = gaussian(&mut rng, d);
        let n2 = dot(&x, &x);
        let y = network_output(rows, &sigma, &x);
        s_n += n2;
        s_nn += n2 * n2;
        s_y += y;
        s_ny += n2 * y;
    }
    let m = samples as f64;
    let cov = s_ny / m - (s_n / m) * (s_y / m);
    let var = s_nn / m - (s_n / m).powi(2);
    let b = cov / var;
    let a = s_y / m - b * s_n / m;
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            let x = gaussian(&mut rng, d);
            let e = network_output(rows, &sigma, &x) - a - b * dot(&x, &x);
            e * e
        })
        .collect();
    (a, b, Estimate::from_samples(&vals))
}

/// Minimum of `Σ_i cost[i][π(i)]` over all permutations (Heap's algorithm).
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Entry `(i_1, …, i_k)` of `Σ_j w_j^{⊗k}`, straight from the definition.
pub fn moment_entry(rows: &Rows, idx: &[usize]) -> f64 {
    rows.iter().map(|w| idx.iter().map(|&i| w[i]).product::<f64>()).sum()
}

/// All multi-indices of length `k` over `0..d` in row-major order.
pub fn multi_indices(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..d).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

/// Spearman rank correlation by the textbook `1 − 6Σd²/(n(n²−1))` formula
/// (no ties assumed).
pub fn spearman_no_ties(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
