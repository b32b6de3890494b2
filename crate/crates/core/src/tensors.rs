//! Dense moment tensors `T^(k) = Σ_i w_i^{⊗k}` and the reductions that turn
//! such a tensor into labelled samples of a two-layer network.

use serde::{Deserialize, Serialize};

use crate::ensembles::{check_assumptions, WeightEnsemble};
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Largest number of stored entries for a single tensor.
pub const MAX_ENTRIES: usize = 100_000_000;
/// Largest number of multiply-adds accepted by the index-pattern contraction.
pub const MAX_CONTRACTION_WORK: u128 = 2_000_000_000;

/// Number of entries `dim^order`, refusing anything above [`MAX_ENTRIES`].
pub fn entry_count(dim: usize, order: usize) -> Result<usize> {
    match dim.checked_pow(order as u32) {
        Some(n) if n <= MAX_ENTRIES => Ok(n),
        _ => Err(Error::ResourceGuard(format!(
            "a tensor of order {order} in dimension {dim} exceeds {MAX_ENTRIES} entries"
        ))),
    }
}

/// Dense tensor with row-major storage (last index fastest).
///
/// Moment tensors are symmetric; contraction products built from them need
/// not be, so symmetry is measured rather than assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(order: usize, dim: usize) -> Result<Self> {
        let n = entry_count(dim, order)?;
        Ok(Self { order, dim, data: vec![0.0; n] })
    }

    pub fn scalar(value: f64, dim: usize) -> Self {
        Self { order: 0, dim, data: vec![value] }
    }

    pub fn from_data(order: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let n = entry_count(dim, order)?;
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "order {order}, dim {dim} needs {n} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { order, dim, data })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.order);
        self.data[self.offset(idx)]
    }

    /// Value of an order-0 tensor.
    pub fn value(&self) -> Option<f64> {
        (self.order == 0).then(|| self.data[0])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn frobenius_dist_sq(&self, other: &DenseTensor) -> Result<f64> {
        if self.order != other.order || self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "order/dim ({}, {}) vs ({}, {})",
                self.order, self.dim, other.order, other.dim
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        if self.order != other.order || self.dim != other.dim {
            return Err(Error::DimensionMismatch("tensor shapes differ".into()));
        }
        Ok(self.data.iter().zip(&other.data).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Largest `|T(i) − T(sort(i))|` over all multi-indices.
    pub fn symmetry_defect(&self) -> f64 {
        let mut idx = vec![0usize; self.order];
        let mut worst = 0.0_f64;
        for (off, &v) in self.data.iter().enumerate() {
            decode(off, self.dim, &mut idx);
            idx.sort_unstable();
            worst = worst.max((v - self.data[self.offset(&idx)]).abs());
        }
        worst
    }
}

fn decode(mut off: usize, dim: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = off % dim;
        off /= dim;
    }
}

/// `Σ_i w_i^{⊗k}`. `k = 0` gives the scalar `r`.
pub fn build_moment_tensor(w: &WeightEnsemble, k: usize) -> Result<DenseTensor> {
    let d = w.d();
    let mut out = DenseTensor::zeros(k, d)?;
    let mut power = Vec::with_capacity(out.data.len());
    for row in w.rows() {
        power.clear();
        power.push(1.0);
        for _ in 0..k {
            let prev = std::mem::take(&mut power);
            power.reserve(prev.len() * d);
            for p in &prev {
                power.extend(row.iter().map(|v| p * v));
            }
        }
        out.data.iter_mut().zip(&power).for_each(|(o, p)| *o += p);
    }
    Ok(out)
}

/// `⟨T, x^{⊗k}⟩`, contracting the last index repeatedly.
pub fn tensor_apply(t: &DenseTensor, x: &[f64]) -> Result<f64> {
    if x.len() != t.dim {
        return Err(Error::DimensionMismatch(format!("tensor dim {}, vector length {}", t.dim, x.len())));
    }
    if t.order == 0 {
        return Ok(t.data[0]);
    }
    let mut cur: Vec<f64> = t.data.chunks_exact(t.dim).map(|c| dot(c, x)).collect();
    for _ in 1..t.order {
        cur = cur.chunks_exact(t.dim).map(|c| dot(c, x)).collect();
    }
    Ok(cur[0])
}

/// `Σ_j T(j, j, i_3, …, i_k)`, an order-`(k−2)` tensor. For a moment tensor
/// of unit-norm weights this is the moment tensor of order `k − 2`.
/// Order 2 is accepted and yields the trace as an order-0 tensor.
pub fn contract_pair(t: &DenseTensor) -> Result<DenseTensor> {
    if t.order < 2 {
        return Err(Error::Precondition(format!("cannot contract a pair of indices of an order-{} tensor", t.order)));
    }
    let d = t.dim;
    let rest = entry_count(d, t.order - 2)?;
    let mut out = vec![0.0; rest];
    for j in 0..d {
        let base = (j * d + j) * rest;
        out.iter_mut().zip(&t.data[base..base + rest]).for_each(|(o, v)| *o += v);
    }
    DenseTensor::from_data(t.order - 2, d, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReductionMode {
    /// One tensor `T^(ℓ)`; the activation has degree `≤ ℓ` and the parity of `ℓ`.
    Parity,
    /// Tensors `T^(ℓ)` and `T^(ℓ+1)`; any activation of degree `≤ ℓ + 1`.
    TwoTensor,
    /// `p` copies of `T^(ℓ)` sharing `k` indices pairwise, `k = m..=⌊ℓ/(p−1)⌋`.
    Noisy { p: usize, m: usize },
}

/// How labels are produced from a moment tensor.
///
/// For `Parity` and `TwoTensor` the coefficients are the monomial
/// coefficients `a_0..a_D` of `σ`. For `Noisy` they are the positive
/// `c_m, …, c_{⌊ℓ/(p−1)⌋}` of `σ(z) = Σ_k c_k z^{p(ℓ−(p−1)k)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionSpec {
    pub ell: usize,
    #[serde(flatten)]
    pub mode: ReductionMode,
    pub coeffs: Vec<f64>,
}

impl ReductionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.ell < 3 {
            return bad(format!("ell must be at least 3, got {}", self.ell));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        let degree = self.coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0);
        match self.mode {
            ReductionMode::Parity => {
                if degree > self.ell {
                    return bad(format!("activation degree {degree} exceeds ell = {}", self.ell));
                }
                if let Some(j) = self.coeffs.iter().enumerate().position(|(j, c)| *c != 0.0 && j % 2 != self.ell % 2) {
                    return bad(format!("monomial of degree {j} does not share the parity of ell = {}", self.ell));
                }
            }
            ReductionMode::TwoTensor => {
                if degree > self.ell + 1 {
                    return bad(format!("activation degree {degree} exceeds ell + 1 = {}", self.ell + 1));
                }
            }
            ReductionMode::Noisy { p, m } => {
                if p < 2 || p % 2 != 0 || p > self.ell + 1 {
                    return bad(format!("p must be even and in [2, ell + 1], got {p}"));
                }
                let k_max = self.ell / (p - 1);
                if m < 1 || m > k_max {
                    return bad(format!("m must lie in [1, {k_max}], got {m}"));
                }
                if self.coeffs.len() != k_max - m + 1 {
                    return bad(format!("noisy mode needs {} coefficients c_{m}..c_{k_max}, got {}", k_max - m + 1, self.coeffs.len()));
                }
                if self.coeffs.iter().any(|c| *c <= 0.0) {
                    return bad("noisy mode needs strictly positive coefficients".into());
                }
            }
        }
        Ok(())
    }

    /// Monomial coefficients of the activation the labels correspond to.
    pub fn activation_monomials(&self) -> Vec<f64> {
        match self.mode {
            ReductionMode::Parity | ReductionMode::TwoTensor => self.coeffs.clone(),
            ReductionMode::Noisy { p, m } => {
                let mut out = vec![0.0; p * (self.ell - (p - 1) * m) + 1];
                for (i, c) in self.coeffs.iter().enumerate() {
                    let k = m + i;
                    out[p * (self.ell - (p - 1) * k)] += c;
                }
                out
            }
        }
    }
}

fn poly_eval(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

/// Direct evaluation `Σ_i σ(⟨w_i, x⟩)` of a polynomial network.
pub fn network_output(w: &WeightEnsemble, monomials: &[f64], x: &[f64]) -> f64 {
    w.rows().map(|row| poly_eval(monomials, dot(row, x))).sum()
}

/// Labels `y_j = Σ_k a_k ⟨T^(k), x_j^{⊗k}⟩`, with every lower-order tensor
/// obtained from `T^(ℓ)` (or `T^(ℓ+1)`) by repeated [`contract_pair`].
pub fn labels_from_tensor(spec: &ReductionSpec, t_ell: &DenseTensor, t_ell_plus_1: Option<&DenseTensor>, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    spec.validate()?;
    if t_ell.order != spec.ell {
        return Err(Error::InvalidSpec(format!("expected a tensor of order {}, got {}", spec.ell, t_ell.order)));
    }
    let upper = match (spec.mode, t_ell_plus_1) {
        (ReductionMode::Parity, _) => None,
        (ReductionMode::TwoTensor, Some(t)) => {
            if t.order != spec.ell + 1 || t.dim != t_ell.dim {
                return Err(Error::InvalidSpec(format!(
                    "second tensor must have order {} and dim {}",
                    spec.ell + 1,
                    t_ell.dim
                )));
            }
            Some(t)
        }
        (ReductionMode::TwoTensor, None) => {
            return Err(Error::InvalidSpec("two-tensor mode needs the order ell + 1 tensor".into()))
        }
        (ReductionMode::Noisy { .. }, _) => {
            return Err(Error::InvalidSpec("noisy mode labels come from noisy_labels".into()))
        }
    };

    let mut needed: Vec<(usize, f64, DenseTensor)> = Vec::new();
    for start in [Some(t_ell), upper].into_iter().flatten() {
        let mut t = start.clone();
        loop {
            let a = spec.coeffs.get(t.order).copied().unwrap_or(0.0);
            if a != 0.0 {
                needed.push((t.order, a, t.clone()));
            }
            if t.order < 2 {
                break;
            }
            t = contract_pair(&t)?;
        }
    }
    xs.iter()
        .map(|x| {
            needed.iter().try_fold(0.0, |acc, (_, a, t)| Ok(acc + a * tensor_apply(t, x)?))
        })
        .collect()
}

fn check_noisy_args(ell: usize, p: usize, k: usize) -> Result<usize> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::InvalidSpec(format!("p must be a positive even integer, got {p}")));
    }
    if k < 1 || (p - 1) * k > ell {
        return Err(Error::InvalidSpec(format!("need 1 <= k and (p - 1)k <= ell, got p = {p}, k = {k}, ell = {ell}")));
    }
    Ok(ell - (p - 1) * k)
}

/// `T_0^(k)`: `p` copies of `T^(ℓ)`, each pair of copies sharing `k` summed
/// indices. Copy `q` reads its indices as
/// `(shared with copies b < q, its own free indices, shared with copies c > q)`.
/// The output has order `p(ℓ − (p−1)k)`, free indices grouped by copy.
pub fn build_noisy_contraction(t_ell: &DenseTensor, p: usize, k: usize) -> Result<DenseTensor> {
    let ell = t_ell.order;
    let f = check_noisy_args(ell, p, k)?;
    let d = t_ell.dim;
    let out_order = p * f;
    let n_shared = k * p * (p - 1) / 2;
    let out_len = entry_count(d, out_order)?;
    let shared_len = (d as u128).checked_pow(n_shared as u32).unwrap_or(u128::MAX);
    let work = shared_len.saturating_mul(out_len as u128).saturating_mul(p as u128);
    if work > MAX_CONTRACTION_WORK {
        return Err(Error::ResourceGuard(format!(
            "index-pattern contraction needs about {work} operations (limit {MAX_CONTRACTION_WORK}); use the weight-factorized form"
        )));
    }
    let shared_len = shared_len as usize;

    // Position of every slot of every copy in the combined (free ++ shared) index vector.
    let pair_slot = |b: usize, c: usize| -> usize {
        // pairs (b, c) with b < c enumerated lexicographically
        let before: usize = (0..b).map(|i| p - 1 - i).sum();
        out_order + (before + (c - b - 1)) * k
    };
    let layout: Vec<Vec<usize>> = (0..p)
        .map(|q| {
            let mut slots = Vec::with_capacity(ell);
            for b in 0..q {
                slots.extend((0..k).map(|a| pair_slot(b, q) + a));
            }
            slots.extend((0..f).map(|s| q * f + s));
            for c in q + 1..p {
                slots.extend((0..k).map(|a| pair_slot(q, c) + a));
            }
            slots
        })
        .collect();

    let mut full = vec![0usize; out_order + n_shared];
    let mut out = vec![0.0; out_len];
    for (o, slot) in out.iter_mut().enumerate() {
        decode(o, d, &mut full[..out_order]);
        let mut acc = 0.0;
        for s in 0..shared_len {
            decode(s, d, &mut full[out_order..]);
            let mut prod = 1.0;
            for copy in &layout {
                let off = copy.iter().fold(0, |a, &pos| a * d + full[pos]);
                prod *= t_ell.data[off];
                if prod == 0.0 {
                    break;
                }
            }
            acc += prod;
        }
        *slot = acc;
    }
    DenseTensor::from_data(out_order, d, out)
}

fn for_each_tuple(r: usize, p: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; p];
    loop {
        visit(&idx);
        let mut pos = p;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < r {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn tuple_weight(gram: &[f64], r: usize, tuple: &[usize], k: usize) -> f64 {
    let mut g = 1.0;
    for b in 0..tuple.len() {
        for c in b + 1..tuple.len() {
            g *= gram[tuple[b] * r + tuple[c]].powi(k as i32);
        }
    }
    g
}

/// The same tensor as [`build_noisy_contraction`], computed from the weights:
/// `Σ_{i_1..i_p} Π_{b<c} ⟨w_{i_b}, w_{i_c}⟩^k ⊗_q w_{i_q}^{⊗f}`.
pub fn noisy_contraction_from_weights(w: &WeightEnsemble, ell: usize, p: usize, k: usize) -> Result<DenseTensor> {
    let f = check_noisy_args(ell, p, k)?;
    let (d, r) = (w.d(), w.r());
    let mut out = DenseTensor::zeros(p * f, d)?;
    let tuples = (r as u128).checked_pow(p as u32).unwrap_or(u128::MAX);
    if tuples.saturating_mul(out.data.len() as u128) > MAX_CONTRACTION_WORK {
        return Err(Error::ResourceGuard(format!("{tuples} index tuples over {} entries is too much work", out.data.len())));
    }
    let gram = w.gram_with(w)?;
    let powers: Vec<Vec<f64>> = w
        .rows()
        .map(|row| build_moment_tensor(&WeightEnsemble::from_rows(d, vec![row.to_vec()], w.kind, w.seed)?, f).map(DenseTensor::into_data))
        .collect::<Result<_>>()?;
    let block = powers[0].len();
    let mut scratch = Vec::with_capacity(out.data.len());
    for_each_tuple(r, p, |tuple| {
        let g = tuple_weight(&gram, r, tuple, k);
        if g == 0.0 {
            return;
        }
        scratch.clear();
        scratch.push(g);
        for &i in tuple {
            let prev = std::mem::take(&mut scratch);
            scratch.reserve(prev.len() * block);
            for a in &prev {
                scratch.extend(powers[i].iter().map(|v| a * v));
            }
        }
        out.data.iter_mut().zip(&scratch).for_each(|(o, v)| *o += v);
    });
    Ok(out)
}

/// Labels of the noisy reduction together with the clean network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyLabels {
    pub labels: Vec<f64>,
    pub clean: Vec<f64>,
    /// The off-diagonal terms `E(x)` evaluated from the teacher's Gram matrix.
    pub explicit_error: Vec<f64>,
    /// `(δ^m r)^{p−1} · y(x)` for every sample.
    pub bound: Vec<f64>,
    pub error_bound_ok: bool,
    /// `max_j |E(x_j)|` from the off-diagonal terms.
    pub max_abs_error: f64,
    pub delta: f64,
}

/// Labels `Σ_k c_k ⟨T_0^(k), x^{⊗p(ℓ−(p−1)k)}⟩` built from `T^(ℓ)` alone,
/// compared against the clean output of `teacher` (used only for checking).
pub fn noisy_labels(spec: &ReductionSpec, t_ell: &DenseTensor, xs: &[Vec<f64>], teacher: &WeightEnsemble) -> Result<NoisyLabels> {
    spec.validate()?;
    let (p, m) = match spec.mode {
        ReductionMode::Noisy { p, m } => (p, m),
        _ => return Err(Error::InvalidSpec("noisy_labels needs a noisy-mode spec".into())),
    };
    if t_ell.order != spec.ell || t_ell.dim != teacher.d() {
        return Err(Error::InvalidSpec(format!(
            "tensor (order {}, dim {}) does not match ell = {} and teacher dim {}",
            t_ell.order,
            t_ell.dim,
            spec.ell,
            teacher.d()
        )));
    }
    let ell = spec.ell;
    let k_max = ell / (p - 1);
    let contracted: Vec<(f64, DenseTensor)> = (m..=k_max)
        .zip(&spec.coeffs)
        .map(|(k, &c)| Ok((c, build_noisy_contraction(t_ell, p, k)?)))
        .collect::<Result<_>>()?;

    let monomials = spec.activation_monomials();
    let r = teacher.r();
    let gram = teacher.gram_with(teacher)?;
    let delta = check_assumptions(teacher).delta;
    let factor = (delta.powi(m as i32) * r as f64).powi(p as i32 - 1);

    let mut out = NoisyLabels {
        labels: Vec::with_capacity(xs.len()),
        clean: Vec::with_capacity(xs.len()),
        explicit_error: Vec::with_capacity(xs.len()),
        bound: Vec::with_capacity(xs.len()),
        error_bound_ok: true,
        max_abs_error: 0.0,
        delta,
    };
    for x in xs {
        let label = contracted.iter().try_fold(0.0, |acc, (c, t)| Ok::<_, Error>(acc + c * tensor_apply(t, x)?))?;
        let clean = network_output(teacher, &monomials, x);
        let proj: Vec<f64> = teacher.rows().map(|w| dot(w, x)).collect();
        let mut explicit = 0.0;
        for (k, &c) in (m..=k_max).zip(&spec.coeffs) {
            let f = (ell - (p - 1) * k) as i32;
            for_each_tuple(r, p, |tuple| {
                if tuple.iter().all(|&i| i == tuple[0]) {
                    return;
                }
                let g = tuple_weight(&gram, r, tuple, k);
                if g != 0.0 {
                    explicit += c * g * tuple.iter().map(|&i| proj[i].powi(f)).product::<f64>();
                }
            });
        }
        let bound = factor * clean;
        let err = (label - clean).abs();
        out.error_bound_ok &= err <= bound + 1e-9;
        out.max_abs_error = out.max_abs_error.max(explicit.abs());
        out.labels.push(label);
        out.clean.push(clean);
        out.explicit_error.push(explicit);
        out.bound.push(bound);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{make_identity, make_simplex, EnsembleKind};

    fn ens(d: usize, rows: Vec<Vec<f64>>) -> WeightEnsemble {
        WeightEnsemble::from_rows(d, rows, EnsembleKind::Custom, 0).unwrap()
    }

    #[test]
    fn build_examples() {
        let t = build_moment_tensor(&ens(2, vec![vec![1.0, 0.0]]), 3).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let t = build_moment_tensor(&make_identity(2).unwrap(), 2).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0]);
        let t = build_moment_tensor(&ens(2, vec![vec![0.6, 0.8]]), 2).unwrap();
        let want = [0.36, 0.48, 0.48, 0.64];
        assert!(t.data().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn memory_guard() {
        assert!(matches!(DenseTensor::zeros(9, 10), Err(Error::ResourceGuard(_))));
        assert!(matches!(entry_count(1000, 100), Err(Error::ResourceGuard(_))));
    }

    #[test]
    fn apply_examples() {
        let t = build_moment_tensor(&ens(2, vec![vec![1.0, 0.0]]), 3).unwrap();
        assert_eq!(tensor_apply(&t, &[2.0, 5.0]).unwrap(), 8.0);
        let i2 = build_moment_tensor(&make_identity(2).unwrap(), 2).unwrap();
        assert_eq!(tensor_apply(&i2, &[3.0, 4.0]).unwrap(), 25.0);
        assert!(tensor_apply(&i2, &[1.0]).is_err());
    }

    #[test]
    fn contraction_examples() {
        let w = make_simplex(4, 5, 0).unwrap();
        let c = contract_pair(&build_moment_tensor(&w, 5).unwrap()).unwrap();
        assert!(c.max_abs_diff(&build_moment_tensor(&w, 3).unwrap()).unwrap() < 1e-12);

        let e1 = ens(2, vec![vec![1.0, 0.0]]);
        let c = contract_pair(&build_moment_tensor(&e1, 3).unwrap()).unwrap();
        assert_eq!((c.order(), c.data()), (1, &[1.0, 0.0][..]));

        let mut scaled = make_simplex(3, 4, 1).unwrap();
        let unit = build_moment_tensor(&scaled, 1).unwrap();
        scaled.as_flat_mut().iter_mut().for_each(|v| *v *= 2.0);
        let c = contract_pair(&build_moment_tensor(&scaled, 3).unwrap()).unwrap();
        let want: Vec<f64> = unit.data().iter().map(|v| 8.0 * v).collect();
        // ‖2w‖² · (2w) = 8w
        assert!(c.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));

        let trace = contract_pair(&build_moment_tensor(&w, 2).unwrap()).unwrap();
        assert!((trace.value().unwrap() - 5.0).abs() < 1e-12);
        assert!(contract_pair(&build_moment_tensor(&w, 1).unwrap()).is_err());
    }

    #[test]
    fn spec_validation() {
        let ok = ReductionSpec { ell: 3, mode: ReductionMode::Parity, coeffs: vec![0.0, 1.0, 0.0, 0.3] };
        assert!(ok.validate().is_ok());
        let wrong_parity = ReductionSpec { ell: 3, mode: ReductionMode::Parity, coeffs: vec![1.0, 1.0] };
        assert!(matches!(wrong_parity.validate(), Err(Error::InvalidSpec(_))));
        let too_high = ReductionSpec { ell: 3, mode: ReductionMode::TwoTensor, coeffs: vec![0.0; 6].into_iter().chain([1.0]).collect() };
        assert!(too_high.validate().is_err());
        let noisy = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 2, m: 3 }, coeffs: vec![1.0, 1.0] };
        assert!(noisy.validate().is_ok());
        assert_eq!(noisy.activation_monomials(), vec![1.0, 0.0, 1.0]);
        let odd_p = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 3, m: 1 }, coeffs: vec![1.0, 1.0] };
        assert!(odd_p.validate().is_err());
        let negative = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 2, m: 3 }, coeffs: vec![1.0, -1.0] };
        assert!(negative.validate().is_err());
        let small_ell = ReductionSpec { ell: 2, mode: ReductionMode::TwoTensor, coeffs: vec![1.0] };
        assert!(small_ell.validate().is_err());
    }

    #[test]
    fn noisy_single_row() {
        let e1 = ens(2, vec![vec![1.0, 0.0]]);
        let t3 = build_moment_tensor(&e1, 3).unwrap();
        let t0 = build_noisy_contraction(&t3, 2, 1).unwrap();
        assert_eq!(t0.order(), 4);
        assert_eq!(t0.get(&[0, 0, 0, 0]), 1.0);
        assert_eq!(t0.data().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn noisy_full_contraction_is_power_sum() {
        let w = make_simplex(3, 4, 2).unwrap();
        let t = build_moment_tensor(&w, 3).unwrap();
        let v = build_noisy_contraction(&t, 2, 3).unwrap().value().unwrap();
        let p3: f64 = w.gram_with(&w).unwrap().iter().map(|g| g.powi(3)).sum();
        assert!((v - p3).abs() < 1e-12);
    }

    #[test]
    fn noisy_paths_agree() {
        let w = make_simplex(3, 4, 5).unwrap();
        let t = build_moment_tensor(&w, 4).unwrap();
        for k in 1..=4 {
            let a = build_noisy_contraction(&t, 2, k).unwrap();
            let b = noisy_contraction_from_weights(&w, 4, 2, k).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-12, "k = {k}");
        }
    }
}
