//! Hermite analysis of activation functions on Gaussian space.
//!
//! Everything here uses the orthonormal Hermite basis
//! `h₀ = 1, h₁ = z, h₂ = (z² − 1)/√2, …` with respect to the standard Gaussian,
//! evaluated by the three-term recurrence
//! `h_{k+1}(z) = (z·h_k(z) − √k·h_{k−1}(z)) / √(k+1)`.

use serde::{Deserialize, Serialize};

use crate::ensembles::WeightEnsemble;
use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;

/// Largest degree accepted by [`hermite_eval`].
pub const MAX_HERMITE_DEGREE: usize = 200;
/// Truncation used for activations with an infinite Hermite expansion.
pub const DEFAULT_TRUNCATION: usize = 40;
/// Node count of the primary quadrature rule (doubled for the convergence check).
pub const DEFAULT_QUADRATURE_NODES: usize = 201;
/// Coefficients below this magnitude count as zero for parity detection.
pub const PARITY_THRESHOLD: f64 = 1e-10;
/// Two successive residual estimates (node count doubled) must agree to this,
/// scaled by `max(1, E σ²)`.
pub const CONVERGENCE_TOL: f64 = 1e-9;
/// Node doubling stops here; not settling by then is a numerical error.
pub const MAX_QUADRATURE_NODES: usize = 1608;

/// Values `h_0(z), …, h_k(z)` without any range check.
pub(crate) fn hermite_all(k: usize, z: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(k + 1);
    h.push(1.0);
    if k >= 1 {
        h.push(z);
    }
    for j in 1..k {
        let jf = j as f64;
        let next = (z * h[j] - jf.sqrt() * h[j - 1]) / (jf + 1.0).sqrt();
        h.push(next);
    }
    h
}

/// Orthonormal Hermite polynomial `h_k(z)`.
pub fn hermite_eval(k: usize, z: f64) -> Result<f64> {
    if k > MAX_HERMITE_DEGREE {
        return Err(Error::Domain(format!(
            "Hermite degree {k} exceeds the supported maximum {MAX_HERMITE_DEGREE}"
        )));
    }
    Ok(hermite_all(k, z)[k])
}

/// How an activation is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    /// `σ(z) = Σ_j coeffs[j]·z^j`.
    Polynomial { coeffs: Vec<f64> },
    /// `σ(z) = tanh(β z)`.
    ScaledTanh { beta: f64 },
}

impl ActivationKind {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            ActivationKind::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c),
            ActivationKind::ScaledTanh { beta } => (beta * z).tanh(),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            ActivationKind::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (j, c)| acc * z + j as f64 * c),
            ActivationKind::ScaledTanh { beta } => {
                let t = (beta * z).tanh();
                beta * (1.0 - t * t)
            }
        }
    }

    /// Polynomial degree with trailing zeros ignored; `None` for non-polynomials.
    pub fn degree(&self) -> Option<usize> {
        match self {
            ActivationKind::Polynomial { coeffs } => {
                Some(coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0))
            }
            ActivationKind::ScaledTanh { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ActivationKind::Polynomial { coeffs } => {
                let parts: Vec<String> = coeffs.iter().map(|c| format!("{c}")).collect();
                format!("poly[{}]", parts.join(","))
            }
            ActivationKind::ScaledTanh { beta } => format!("tanh({beta}x)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
    None,
}

/// An activation together with its truncated Hermite expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    /// `σ̂_0, …, σ̂_K`.
    pub hermite_coeffs: Vec<f64>,
    pub truncation_degree: usize,
    /// `E σ(G)² − Σ_{k≤K} σ̂_k²`, clamped at zero.
    pub parseval_residual: f64,
    pub parity: Parity,
    /// `E σ(G)²` by quadrature.
    pub second_moment: f64,
}

impl Activation {
    pub fn polynomial(coeffs: &[f64]) -> Result<Self> {
        let kind = ActivationKind::Polynomial { coeffs: coeffs.to_vec() };
        let k = kind.degree().unwrap_or(0);
        hermite_coefficients(&kind, k)
    }

    pub fn scaled_tanh(beta: f64) -> Result<Self> {
        hermite_coefficients(&ActivationKind::ScaledTanh { beta }, DEFAULT_TRUNCATION)
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.kind.eval(z)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.kind.derivative(z)
    }

    /// `σ̂_k`, zero beyond the truncation.
    pub fn coeff(&self, k: usize) -> f64 {
        self.hermite_coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self.kind, ActivationKind::Polynomial { .. })
    }
}

/// Converts monomial coefficients into orthonormal Hermite coefficients,
/// using `z·h_k = √(k+1)·h_{k+1} + √k·h_{k−1}`.
fn monomial_to_hermite(coeffs: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut power = vec![1.0]; // expansion of z^j
    for (j, &a) in coeffs.iter().enumerate() {
        if j > 0 {
            let mut next = vec![0.0; power.len() + 1];
            for (k, &v) in power.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                next[k + 1] += ((k + 1) as f64).sqrt() * v;
                if k > 0 {
                    next[k - 1] += (k as f64).sqrt() * v;
                }
            }
            power = next;
        }
        if a != 0.0 {
            for (k, &v) in power.iter().enumerate().take(len) {
                out[k] += a * v;
            }
        }
    }
    out
}

fn detect_parity(coeffs: &[f64]) -> Parity {
    let odd_zero = coeffs.iter().skip(1).step_by(2).all(|c| c.abs() < PARITY_THRESHOLD);
    let even_zero = coeffs.iter().step_by(2).all(|c| c.abs() < PARITY_THRESHOLD);
    if odd_zero {
        Parity::Even
    } else if even_zero {
        Parity::Odd
    } else {
        Parity::None
    }
}

fn quadrature_coeffs(kind: &ActivationKind, k_max: usize, nodes: usize) -> (Vec<f64>, f64) {
    let rule = GaussHermite::cached(nodes);
    // slots 0..=k_max hold σ·h_k, the last one σ²
    let mut vals = rule.expect_many(k_max + 2, |z, out| {
        let s = kind.eval(z);
        for (o, h) in out.iter_mut().zip(hermite_all(k_max, z)) {
            *o = s * h;
        }
        out[k_max + 1] = s * s;
    });
    let second = vals.pop().expect("second moment slot");
    (vals, second)
}

/// Hermite coefficients `σ̂_0..σ̂_K` of an activation.
///
/// Polynomials are converted exactly. `scaled_tanh` is integrated starting
/// from a 201-node rule, doubling the node count until two successive
/// Parseval residuals agree; the finer rule's values are returned.
pub fn hermite_coefficients(kind: &ActivationKind, truncation: usize) -> Result<Activation> {
    match kind {
        ActivationKind::Polynomial { coeffs } => {
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain("polynomial coefficients must be finite".into()));
            }
            let degree = kind.degree().unwrap_or(0);
            if truncation < degree {
                return Err(Error::Precondition(format!(
                    "truncation degree {truncation} is below the polynomial degree {degree}"
                )));
            }
            let hermite = monomial_to_hermite(coeffs, truncation + 1);
            let nodes = DEFAULT_QUADRATURE_NODES.max(degree + 1);
            let rule = GaussHermite::cached(nodes);
            let second = rule.expect(|z| {
                let s = kind.eval(z);
                s * s
            });
            let captured: f64 = hermite.iter().map(|c| c * c).sum();
            Ok(Activation {
                kind: kind.clone(),
                parity: detect_parity(&hermite),
                parseval_residual: (second - captured).max(0.0),
                hermite_coeffs: hermite,
                truncation_degree: truncation,
                second_moment: second,
            })
        }
        ActivationKind::ScaledTanh { beta } => {
            if !beta.is_finite() || *beta <= 0.0 {
                return Err(Error::Domain(format!("tanh slope must be positive, got {beta}")));
            }
            if truncation > MAX_HERMITE_DEGREE {
                return Err(Error::Domain(format!("truncation {truncation} exceeds {MAX_HERMITE_DEGREE}")));
            }
            let residual = |c: &[f64], s: f64| s - c.iter().map(|v| v * v).sum::<f64>();
            let mut nodes = DEFAULT_QUADRATURE_NODES;
            let (mut coeffs, mut second) = quadrature_coeffs(kind, truncation, nodes);
            let mut res = residual(&coeffs, second);
            // Double until the residual settles. A doubling that moves it more
            // than the previous one means the rule is not converging.
            let mut last_change = f64::INFINITY;
            while nodes < MAX_QUADRATURE_NODES {
                let (fine, fine_second) = quadrature_coeffs(kind, truncation, 2 * nodes);
                let fine_res = residual(&fine, fine_second);
                let change = (fine_res - res).abs();
                let tol = CONVERGENCE_TOL * fine_second.max(1.0);
                if change > tol && change > last_change {
                    return Err(Error::Numerical(format!(
                        "quadrature did not converge: the Parseval residual moved by {change:e} \
                         going to {} nodes, more than the previous {last_change:e}",
                        2 * nodes
                    )));
                }
                (coeffs, second, res, nodes, last_change) = (fine, fine_second, fine_res, 2 * nodes, change);
                if change <= tol {
                    break;
                }
            }
            Ok(Activation {
                kind: kind.clone(),
                parity: detect_parity(&coeffs),
                parseval_residual: res.max(0.0),
                hermite_coeffs: coeffs,
                truncation_degree: truncation,
                second_moment: second,
            })
        }
    }
}

/// `E σ(⟨u,x⟩)γ(⟨v,x⟩)` for unit `u, v` with `⟨u,v⟩ = ρ`, i.e. `Σ_k σ̂_k γ̂_k ρ^k`.
pub fn gaussian_pair_expectation(sigma_hat: &[f64], gamma_hat: &[f64], rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("correlation must lie in [-1, 1], got {rho}")));
    }
    let mut power = 1.0;
    let mut acc = 0.0;
    for (s, g) in sigma_hat.iter().zip(gamma_hat) {
        acc += s * g * power;
        power *= rho;
    }
    Ok(acc)
}

/// Closed-form moments of `y(x) = Σ_i σ(⟨w_i, x⟩)` and of the best predictor
/// of the form `a + b‖x‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean_y: f64,
    pub var_y: f64,
    pub cov_y_norm2: f64,
    pub baseline_a: f64,
    pub baseline_b: f64,
    pub baseline_risk: f64,
}

pub fn network_moments(act: &Activation, ensemble: &WeightEnsemble) -> Result<MomentSummary> {
    ensemble.require_unit_rows(1e-8)?;
    let r = ensemble.r() as f64;
    let d = ensemble.d() as f64;
    let gram = ensemble.gram_with(ensemble)?;
    let k_max = act.truncation_degree;
    let mut var_y = 0.0;
    let mut powers = gram.clone();
    for k in 1..=k_max {
        if k > 1 {
            powers.iter_mut().zip(&gram).for_each(|(p, g)| *p *= g);
        }
        let c = act.coeff(k);
        if c != 0.0 {
            var_y += c * c * powers.iter().sum::<f64>();
        }
    }
    let s0 = act.coeff(0);
    let s2 = act.coeff(2);
    let mean_y = r * s0;
    let cov = std::f64::consts::SQRT_2 * s2 * r;
    let b = cov / (2.0 * d);
    let a = mean_y - b * d;
    let baseline_risk = var_y - s2 * s2 * r * r / d;
    Ok(MomentSummary {
        mean_y,
        var_y,
        cov_y_norm2: cov,
        baseline_a: a,
        baseline_b: b,
        baseline_risk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT6: f64 = 2.449_489_742_783_178;

    #[test]
    fn hermite_values() {
        assert!((hermite_eval(2, 0.0).unwrap() + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(hermite_eval(1, 3.0).unwrap(), 3.0);
        // He_3(1)/√6 = (1 − 3)/√6
        assert!((hermite_eval(3, 1.0).unwrap() + 2.0 / SQRT6).abs() < 1e-15);
        assert!(matches!(hermite_eval(201, 0.5), Err(Error::Domain(_))));
        assert!(hermite_eval(200, 0.5).unwrap().is_finite());
    }

    #[test]
    fn orthonormal_under_quadrature() {
        let rule = GaussHermite::new(DEFAULT_QUADRATURE_NODES);
        for k in 0..=12 {
            for l in 0..=12 {
                let v = rule.expect(|z| {
                    let h = hermite_all(12, z);
                    h[k] * h[l]
                });
                let want = if k == l { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-8, "k={k} l={l} v={v}");
            }
        }
    }

    #[test]
    fn identity_activation_coefficients() {
        let act = hermite_coefficients(&ActivationKind::Polynomial { coeffs: vec![0.0, 1.0] }, 4).unwrap();
        assert_eq!(act.hermite_coeffs, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(act.parity, Parity::Odd);
        assert!(act.parseval_residual < 1e-10);
    }

    #[test]
    fn cubic_coefficients() {
        let act = hermite_coefficients(&ActivationKind::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 1.0] }, 4).unwrap();
        assert!((act.coeff(1) - 3.0).abs() < 1e-12);
        assert!((act.coeff(3) - SQRT6).abs() < 1e-12);
        for k in [0, 2, 4] {
            assert_eq!(act.coeff(k), 0.0);
        }
    }

    #[test]
    fn h2_is_a_basis_vector() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let act = hermite_coefficients(&ActivationKind::Polynomial { coeffs: vec![-s, 0.0, s] }, 4).unwrap();
        assert!(act.coeff(0).abs() < 1e-15);
        assert!((act.coeff(2) - 1.0).abs() < 1e-15);
        assert_eq!(act.parity, Parity::Even);
    }

    #[test]
    fn truncation_below_degree_is_rejected() {
        let r = hermite_coefficients(&ActivationKind::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 1.0] }, 2);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn tanh_is_odd_and_nearly_captured() {
        let act = Activation::scaled_tanh(2.5).unwrap();
        assert_eq!(act.parity, Parity::Odd);
        for k in (0..=40).step_by(2) {
            assert!(act.coeff(k).abs() < 1e-12);
        }
        // The tail beyond K = 40 carries about 2.6e-4 of E σ².
        assert!(act.parseval_residual > 0.0 && act.parseval_residual < 1e-3, "{}", act.parseval_residual);
        // σ̂₁ = E[G tanh(βG)] > 0
        assert!(act.coeff(1) > 0.5);
    }

    #[test]
    fn pair_expectation_examples() {
        let x = [0.0, 1.0];
        assert!((gaussian_pair_expectation(&x, &x, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let a = [0.3, 1.0, 2.0];
        let b = [0.7, -4.0];
        assert!((gaussian_pair_expectation(&a, &b, 0.0).unwrap() - 0.21).abs() < 1e-15);
        let cube = [0.0, 3.0, 0.0, SQRT6];
        assert!((gaussian_pair_expectation(&cube, &cube, 1.0).unwrap() - 15.0).abs() < 1e-12);
        assert!(gaussian_pair_expectation(&cube, &cube, 1.5).is_err());
    }

    #[test]
    fn moments_identity_linear() {
        let act = Activation::polynomial(&[0.0, 1.0]).unwrap();
        let w = WeightEnsemble::identity(5).unwrap();
        let m = network_moments(&act, &w).unwrap();
        assert_eq!(m.mean_y, 0.0);
        assert!((m.var_y - 5.0).abs() < 1e-12);
        assert!((m.baseline_risk - 5.0).abs() < 1e-12);
        assert_eq!(m.baseline_b, 0.0);
    }

    #[test]
    fn moments_single_h2_unit() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let act = Activation::polynomial(&[-s, 0.0, s]).unwrap();
        let d = 4;
        let w = WeightEnsemble::from_rows(d, vec![vec![1.0, 0.0, 0.0, 0.0]], crate::ensembles::EnsembleKind::Custom, 0).unwrap();
        let m = network_moments(&act, &w).unwrap();
        assert!((m.var_y - 1.0).abs() < 1e-12);
        assert!((m.baseline_risk - (1.0 - 1.0 / d as f64)).abs() < 1e-12);
    }
}
