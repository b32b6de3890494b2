#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use tensornet::ensembles::{EnsembleKind, WeightEnsemble};
use tensornet::linalg::{gaussian_vec, random_unit_vec};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `r` i.i.d. uniform unit rows in dimension `d`.
pub fn unit_rows(d: usize, r: usize, seed: u64) -> WeightEnsemble {
    let mut g = rng(seed);
    let rows = (0..r).map(|_| random_unit_vec(&mut g, d)).collect();
    WeightEnsemble::from_rows(d, rows, EnsembleKind::Custom, seed).unwrap()
}

pub fn gaussian_inputs(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut g = rng(seed);
    (0..n).map(|_| gaussian_vec(&mut g, d)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Monomial coefficients of `h_2 + h_4`.
pub fn h2_plus_h4() -> Vec<f64> {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s24 = 1.0 / 24f64.sqrt();
    vec![-s2 + 3.0 * s24, 0.0, s2 - 6.0 * s24, 0.0, s24]
}
