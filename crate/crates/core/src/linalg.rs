//! Small dense helpers shared by the ensemble, risk and SGD code.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// ChaCha20 generator for `seed`, positioned on an independent `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scales `v` to unit length in place and returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Draws a vector of i.i.d. standard normal entries.
pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform point on the unit sphere in `dim` dimensions.
pub fn random_unit_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, dim);
        if normalize(&mut v) > 1e-300 {
            return v;
        }
    }
}

/// Haar-distributed orthogonal matrix from the QR factorization of a
/// Gaussian matrix, with column signs fixed so that diag(R) > 0.
pub fn haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).iter_mut().for_each(|x| *x = -*x);
        }
    }
    q
}

/// Orthonormal basis of the complement of the all-ones vector in
/// `R^{n}`, returned as an `n × (n-1)` matrix.
///
/// Built from the Householder reflection that maps `1/√n` onto `e₁`: the
/// reflection is an involution, so its first column is `1/√n` and the
/// remaining columns span `1⊥`.
pub fn ones_complement_basis(n: usize) -> DMatrix<f64> {
    assert!(n >= 2);
    let s = 1.0 / (n as f64).sqrt();
    let mut u = vec![s; n];
    u[0] -= 1.0;
    let uu = dot(&u, &u);
    let h = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - 2.0 * u[i] * u[j] / uu
    });
    h.columns(1, n - 1).into_owned()
}

/// Largest absolute eigenvalue of a symmetric matrix (dense solve).
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}
