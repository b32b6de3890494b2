//! Weight ensembles for the teacher network and the assumption constants
//! (unit norm, pairwise correlation, mean, covariance) measured on them.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm};

/// Name of the pseudo-random generator behind every seeded construction.
pub const PRNG_NAME: &str = "ChaCha20Rng (rand_chacha 0.9), seed_from_u64";

/// Attempts per student row in [`make_constrained_student`].
pub const MAX_STUDENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Identity,
    CenteredIdentity,
    Simplex,
    RandomIsotropic,
    /// Concatenated Haar orthogonal blocks, centered and not renormalized.
    HaarCentered,
    Custom,
}

impl EnsembleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnsembleKind::Identity => "identity",
            EnsembleKind::CenteredIdentity => "centered_identity",
            EnsembleKind::Simplex => "simplex",
            EnsembleKind::RandomIsotropic => "random_isotropic",
            EnsembleKind::HaarCentered => "haar_centered",
            EnsembleKind::Custom => "custom",
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => EnsembleKind::Identity,
            "centered_identity" => EnsembleKind::CenteredIdentity,
            "simplex" => EnsembleKind::Simplex,
            "random_isotropic" => EnsembleKind::RandomIsotropic,
            "haar_centered" => EnsembleKind::HaarCentered,
            "custom" => EnsembleKind::Custom,
            other => return Err(Error::Parse(format!("unknown ensemble kind '{other}'"))),
        })
    }
}

/// An `r × d` weight matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEnsemble {
    d: usize,
    r: usize,
    data: Vec<f64>,
    pub seed: u64,
    pub kind: EnsembleKind,
}

impl WeightEnsemble {
    pub fn from_rows(d: usize, rows: Vec<Vec<f64>>, kind: EnsembleKind, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Precondition("dimension must be at least 1".into()));
        }
        let r = rows.len();
        let mut data = Vec::with_capacity(r * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch(format!("row {i} has length {} but d = {d}", row.len())));
            }
            data.extend(row);
        }
        Ok(Self { d, r, data, seed, kind })
    }

    pub fn from_flat(d: usize, data: Vec<f64>, kind: EnsembleKind, seed: u64) -> Result<Self> {
        if d == 0 || data.len() % d != 0 {
            return Err(Error::DimensionMismatch(format!("{} values do not form rows of length {d}", data.len())));
        }
        Ok(Self { d, r: data.len() / d, data, seed, kind })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    /// Largest deviation of a row norm from one.
    pub fn unit_norm_residual(&self) -> f64 {
        self.rows().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn require_unit_rows(&self, tol: f64) -> Result<()> {
        let res = self.unit_norm_residual();
        if res > tol {
            return Err(Error::Precondition(format!(
                "weight rows must have unit norm (max deviation {res:e} > {tol:e})"
            )));
        }
        Ok(())
    }

    /// `r × R` matrix of inner products `⟨a_i, b_j⟩`, row-major.
    pub fn gram_with(&self, other: &WeightEnsemble) -> Result<Vec<f64>> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch(format!("d = {} vs d = {}", self.d, other.d)));
        }
        let mut g = Vec::with_capacity(self.r * other.r);
        for a in self.rows() {
            for b in other.rows() {
                g.push(dot(a, b));
            }
        }
        Ok(g)
    }

    /// `Σ_i w_i`.
    pub fn row_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.d];
        for row in self.rows() {
            s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        s
    }

    /// `Σ_i w_i w_iᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let w = DMatrix::from_row_slice(self.r, self.d, &self.data);
        w.transpose() * w
    }

    pub fn identity(d: usize) -> Result<Self> {
        make_identity(d)
    }
}

fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Rows of the `d × d` identity.
pub fn make_identity(d: usize) -> Result<WeightEnsemble> {
    if d == 0 {
        return Err(Error::Precondition("d must be at least 1".into()));
    }
    let rows = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    WeightEnsemble::from_rows(d, rows, EnsembleKind::Identity, 0)
}

/// Rows `(e_i − 1/d)·√(d/(d−1))`.
pub fn make_centered_identity(d: usize) -> Result<WeightEnsemble> {
    if d < 2 {
        return Err(Error::Precondition(format!("centered identity needs d >= 2, got {d}")));
    }
    let scale = (d as f64 / (d as f64 - 1.0)).sqrt();
    let off = 1.0 / d as f64;
    let rows = (0..d)
        .map(|i| (0..d).map(|j| scale * (if i == j { 1.0 } else { 0.0 } - off)).collect())
        .collect();
    WeightEnsemble::from_rows(d, rows, EnsembleKind::CenteredIdentity, 0)
}

/// `r/(d+1)` independently rotated copies of the regular simplex in `R^d`.
pub fn make_simplex(d: usize, r: usize, seed: u64) -> Result<WeightEnsemble> {
    if d == 0 || r == 0 || r % (d + 1) != 0 {
        return Err(Error::Precondition(format!("simplex ensembles need r a positive multiple of d+1 (d={d}, r={r})")));
    }
    let mut rng = seeded_rng(seed);
    let basis = linalg::ones_complement_basis(d + 1);
    let scale = ((d as f64 + 1.0) / d as f64).sqrt();
    let mut data = Vec::with_capacity(r * d);
    for _ in 0..r / (d + 1) {
        let q = linalg::haar_orthogonal(&mut rng, d);
        let block = &basis * q;
        for i in 0..=d {
            data.extend(block.row(i).iter().map(|v| scale * v));
        }
    }
    WeightEnsemble::from_flat(d, data, EnsembleKind::Simplex, seed)
}

/// `w_i = (g_i − ḡ)/‖g_i − ḡ‖` with `g_i ~ N(0, I_d/d)`.
pub fn make_random_isotropic(d: usize, r: usize, seed: u64) -> Result<WeightEnsemble> {
    if d == 0 || r < 2 {
        return Err(Error::Precondition(format!("random isotropic ensembles need d >= 1 and r >= 2 (d={d}, r={r})")));
    }
    let mut rng = seeded_rng(seed);
    let sd = 1.0 / (d as f64).sqrt();
    let mut rows: Vec<Vec<f64>> = (0..r)
        .map(|_| linalg::gaussian_vec(&mut rng, d).into_iter().map(|v| v * sd).collect())
        .collect();
    let mut mean = vec![0.0; d];
    for row in &rows {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / r as f64);
    }
    for row in rows.iter_mut() {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        if linalg::normalize(row) == 0.0 {
            return Err(Error::Numerical("centered Gaussian vector vanished".into()));
        }
    }
    WeightEnsemble::from_rows(d, rows, EnsembleKind::RandomIsotropic, seed)
}

/// `r/d` Haar orthogonal `d × d` blocks stacked, then centered by the empirical
/// mean of all rows. Rows are not renormalized.
pub fn make_haar_centered(d: usize, r: usize, seed: u64) -> Result<WeightEnsemble> {
    if d == 0 || r == 0 || r % d != 0 {
        return Err(Error::Precondition(format!("r must be a positive multiple of d (d={d}, r={r})")));
    }
    let mut rng = seeded_rng(seed);
    let mut data = Vec::with_capacity(r * d);
    for _ in 0..r / d {
        let q = linalg::haar_orthogonal(&mut rng, d);
        for i in 0..d {
            data.extend(q.row(i).iter());
        }
    }
    let mut w = WeightEnsemble::from_flat(d, data, EnsembleKind::HaarCentered, seed)?;
    let mean: Vec<f64> = w.row_sum().into_iter().map(|s| s / r as f64).collect();
    for i in 0..r {
        w.row_mut(i).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    Ok(w)
}

/// Measured assumption constants of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `max_{i≠j} |⟨w_i, w_j⟩|`.
    pub delta: f64,
    /// `‖Σ w_i‖² / r`.
    pub eta_avg: f64,
    /// `(d/r)·‖Σ w_i w_iᵀ − (r/d) I‖_op`.
    pub eta_var: f64,
    pub unit_norm_residual: f64,
    /// `1 − δ(1+η_var)r/d ≥ 0`.
    pub feasible_thm2: bool,
}

pub fn check_assumptions(w: &WeightEnsemble) -> AssumptionReport {
    let (r, d) = (w.r(), w.d());
    let mut delta: f64 = 0.0;
    for i in 0..r {
        for j in (i + 1)..r {
            delta = delta.max(dot(w.row(i), w.row(j)).abs());
        }
    }
    let s = w.row_sum();
    let eta_avg = dot(&s, &s) / r as f64;
    let ratio = r as f64 / d as f64;
    let mut m = w.second_moment();
    for i in 0..d {
        m[(i, i)] -= ratio;
    }
    let eta_var = linalg::sym_spectral_norm(&m) / ratio;
    AssumptionReport {
        delta,
        eta_avg,
        eta_var,
        unit_norm_residual: w.unit_norm_residual(),
        feasible_thm2: 1.0 - delta * (1.0 + eta_var) * ratio >= 0.0,
    }
}

/// Samples `count` unit rows whose correlation with every teacher row is at
/// most `epsilon` in absolute value.
///
/// Each attempt draws a uniform direction and alternates a sweep of slab
/// projections (onto `|⟨w_i, v⟩| ≤ ε` for each offending teacher row) with
/// renormalization. An attempt is abandoned when it stalls.
pub fn make_constrained_student(teacher: &WeightEnsemble, count: usize, epsilon: f64, seed: u64) -> Result<WeightEnsemble> {
    if !(epsilon >= 0.0 && epsilon < 1.0) {
        return Err(Error::Precondition(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let d = teacher.d();
    let r = teacher.r();
    // Σ_i ⟨w_i, v⟩² ≥ λ_min(Σ w_i w_iᵀ) for unit v, and the constraint caps it at r ε².
    let lam_min = linalg::sym_min_eigenvalue(&teacher.second_moment());
    if lam_min > r as f64 * epsilon * epsilon * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::Infeasible(format!(
            "no unit vector has all teacher correlations <= {epsilon}: every unit v has sum of squared \
             correlations >= {lam_min:.6} but the constraint allows at most r*eps^2 = {:.6}",
            r as f64 * epsilon * epsilon
        )));
    }
    let tol = epsilon * 1e-12 + 1e-15;
    let mut rng = seeded_rng(seed);
    let mut data = Vec::with_capacity(count * d);
    for row_idx in 0..count {
        let mut found = None;
        'attempts: for _ in 0..MAX_STUDENT_ATTEMPTS {
            let mut v = linalg::random_unit_vec(&mut rng, d);
            let mut best = f64::INFINITY;
            let mut since_best = 0;
            for _ in 0..5000 {
                let worst = teacher.rows().map(|w| dot(w, &v).abs()).fold(0.0, f64::max);
                if worst <= epsilon + tol {
                    found = Some(v);
                    break 'attempts;
                }
                if worst < best * (1.0 - 1e-9) {
                    best = worst;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best > 50 {
                        continue 'attempts;
                    }
                }
                for w in teacher.rows() {
                    let c = dot(w, &v);
                    if c.abs() > epsilon {
                        let shift = c - epsilon.copysign(c);
                        v.iter_mut().zip(w).for_each(|(x, wi)| *x -= shift * wi);
                    }
                }
                if linalg::normalize(&mut v) < 1e-12 {
                    continue 'attempts;
                }
            }
        }
        match found {
            Some(v) => data.extend(v),
            None => {
                return Err(Error::Infeasible(format!(
                    "could not place student row {row_idx} within correlation {epsilon} after {MAX_STUDENT_ATTEMPTS} attempts"
                )))
            }
        }
    }
    WeightEnsemble::from_flat(d, data, EnsembleKind::Custom, seed)
}
