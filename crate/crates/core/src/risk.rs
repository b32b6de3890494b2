//! Exact population risk between a teacher and a student network, the
//! trivial-predictor baseline, lower-bound certificates for separated
//! isotropic teachers, and weight-estimation metrics.
//!
//! The population risk uses the Hermite/kernel identity
//! `E|y − ŷ|² = Σ_k σ̂_k² (P_k(W,W) − 2P_k(W,Ŵ) + P_k(Ŵ,Ŵ))` with
//! `P_k(A,B) = Σ_{i,j} ⟨a_i, b_j⟩^k`, valid for unit-norm rows on both sides.

use serde::{Deserialize, Serialize};

use crate::ensembles::{check_assumptions, AssumptionReport, WeightEnsemble};
use crate::error::{Error, Result};
use crate::hermite::{network_moments, Activation, MomentSummary, Parity};
use crate::linalg::{dot, sq_dist};

/// Row-norm tolerance for the unit-norm preconditions.
pub const UNIT_TOL: f64 = 1e-8;
/// Relative slack allowed on theorem inequalities.
pub const BOUND_REL_TOL: f64 = 1e-7;
/// Exact assignment is only attempted up to this many rows.
pub const MAX_ASSIGNMENT_ROWS: usize = 64;

/// `P_k = Σ_{i,j} ⟨a_i, b_j⟩^k` for `k = 0..=K` (`P_0 = r·R`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramPowerSums {
    pub p: Vec<f64>,
    pub cross: bool,
}

impl GramPowerSums {
    pub fn get(&self, k: usize) -> f64 {
        self.p[k]
    }
}

fn power_sums_from_gram(gram: &[f64], k_max: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(k_max + 1);
    p.push(gram.len() as f64);
    let mut powers = gram.to_vec();
    for k in 1..=k_max {
        if k > 1 {
            powers.iter_mut().zip(gram).for_each(|(a, g)| *a *= g);
        }
        p.push(powers.iter().sum());
    }
    p
}

fn require_unit_pair(a: &WeightEnsemble, b: &WeightEnsemble) -> Result<()> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch(format!("teacher d = {}, student d = {}", a.d(), b.d())));
    }
    a.require_unit_rows(UNIT_TOL)?;
    b.require_unit_rows(UNIT_TOL)
}

pub fn gram_power_sums(a: &WeightEnsemble, b: &WeightEnsemble, k_max: usize) -> Result<GramPowerSums> {
    require_unit_pair(a, b)?;
    let gram = a.gram_with(b)?;
    Ok(GramPowerSums {
        p: power_sums_from_gram(&gram, k_max),
        cross: a.as_flat() != b.as_flat(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub population_mse: f64,
    pub var_y: f64,
    pub baseline_risk: f64,
    /// Parseval residual of the activation times `(r + R)²`.
    pub truncation_error_bar: f64,
    pub bound_c1: f64,
    pub bound_c2: f64,
    pub bound_rhs: f64,
    pub bound_applicable: bool,
    pub even_case_used: bool,
}

/// Population MSE between teacher and student. The bound fields are left
/// empty (`bound_applicable = false`); see [`risk_report`].
pub fn population_mse(teacher: &WeightEnsemble, student: &WeightEnsemble, act: &Activation) -> Result<RiskReport> {
    require_unit_pair(teacher, student)?;
    let k_max = act.truncation_degree;
    let tt = power_sums_from_gram(&teacher.gram_with(teacher)?, k_max);
    let ts = power_sums_from_gram(&teacher.gram_with(student)?, k_max);
    let ss = power_sums_from_gram(&student.gram_with(student)?, k_max);
    let mse: f64 = (0..=k_max)
        .map(|k| {
            let c = act.coeff(k);
            c * c * (tt[k] - 2.0 * ts[k] + ss[k])
        })
        .sum();
    let moments = network_moments(act, teacher)?;
    let rr = (teacher.r() + student.r()) as f64;
    Ok(RiskReport {
        population_mse: mse,
        var_y: moments.var_y,
        baseline_risk: moments.baseline_risk,
        truncation_error_bar: act.parseval_residual * rr * rr,
        bound_c1: 0.0,
        bound_c2: 0.0,
        bound_rhs: 0.0,
        bound_applicable: false,
        even_case_used: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub c1: f64,
    pub c2: f64,
    pub rhs: f64,
    pub applicable: bool,
    pub even_case_used: bool,
}

/// Constants `c₁`, `c₂` and the right-hand side `(baseline − c₁)(1 − c₂)` of
/// the generalization lower bound for separated isotropic teachers.
///
/// For even activations the sharper constants (`ε²`, `δ²`, no `σ̂₁` term) are
/// used. `applicable` is false when `1 − δ(1+η_var)r/d < 0`, when the used
/// denominator vanishes, when `ε ∉ (0, 1)`, or when both factors of the
/// product are negative (the product form then no longer follows).
pub fn lower_bound_certificate(
    report: &AssumptionReport,
    act: &Activation,
    baseline_risk: f64,
    d: usize,
    r: usize,
    big_r: usize,
    epsilon: f64,
) -> BoundCertificate {
    let (d, r, big_r) = (d as f64, r as f64, big_r as f64);
    let s1 = act.coeff(1);
    let s2 = act.coeff(2);
    let eta = report.eta_var;
    let even = act.parity == Parity::Even;
    let c1_var = 2.0 * s2 * s2 * eta * eta * r * r / d;
    let (c1, c2_num, denom) = if even {
        (c1_var, 2.0 * epsilon * epsilon * (1.0 + eta) * big_r / d, 1.0 - report.delta.powi(2) * (1.0 + eta) * r / d)
    } else {
        (
            2.0 * s1 * s1 * report.eta_avg * r + c1_var,
            2.0 * epsilon * (1.0 + eta) * big_r / d,
            1.0 - report.delta * (1.0 + eta) * r / d,
        )
    };
    let precondition = 1.0 - report.delta * (1.0 + eta) * r / d;
    let c2 = c2_num / denom;
    let rhs = (baseline_risk - c1) * (1.0 - c2);
    let both_negative = baseline_risk - c1 < 0.0 && 1.0 - c2 < 0.0;
    let applicable = epsilon > 0.0 && epsilon < 1.0 && precondition >= 0.0 && denom > 0.0 && !both_negative;
    BoundCertificate { c1, c2, rhs, applicable, even_case_used: even }
}

/// Population risk plus the lower-bound certificate at the given `ε`.
pub fn risk_report(teacher: &WeightEnsemble, student: &WeightEnsemble, act: &Activation, epsilon: f64) -> Result<RiskReport> {
    let mut report = population_mse(teacher, student, act)?;
    let assumptions = check_assumptions(teacher);
    let cert = lower_bound_certificate(
        &assumptions,
        act,
        report.baseline_risk,
        teacher.d(),
        teacher.r(),
        student.r(),
        epsilon,
    );
    report.bound_c1 = cert.c1;
    report.bound_c2 = cert.c2;
    report.bound_rhs = cert.rhs;
    report.bound_applicable = cert.applicable;
    report.even_case_used = cert.even_case_used;
    Ok(report)
}

/// Outcome of checking the generalization lower bound on one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundCheck {
    NotInScope { reason: String },
    Checked { holds: bool, population_mse: f64, rhs: f64, margin: f64, report: RiskReport },
}

impl BoundCheck {
    pub fn holds(&self) -> Option<bool> {
        match self {
            BoundCheck::Checked { holds, .. } => Some(*holds),
            BoundCheck::NotInScope { .. } => None,
        }
    }
}

pub fn verify_thm2_bound(teacher: &WeightEnsemble, student: &WeightEnsemble, act: &Activation, epsilon: f64) -> Result<BoundCheck> {
    let out = |reason: String| Ok(BoundCheck::NotInScope { reason });
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return out(format!("epsilon = {epsilon} is outside (0, 1)"));
    }
    if teacher.d() != student.d() {
        return Err(Error::DimensionMismatch(format!("teacher d = {}, student d = {}", teacher.d(), student.d())));
    }
    if teacher.unit_norm_residual() > UNIT_TOL || student.unit_norm_residual() > UNIT_TOL {
        return out("rows are not unit norm".into());
    }
    let max_corr = teacher.gram_with(student)?.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_corr > epsilon * (1.0 + 1e-10) {
        return out(format!("student correlation {max_corr} exceeds epsilon {epsilon}"));
    }
    let assumptions = check_assumptions(teacher);
    if !assumptions.feasible_thm2 {
        return out(format!(
            "teacher fails 1 - delta(1+eta_var)r/d >= 0 (delta = {}, eta_var = {})",
            assumptions.delta, assumptions.eta_var
        ));
    }
    let report = risk_report(teacher, student, act, epsilon)?;
    if !report.bound_applicable {
        return out("certificate not applicable for these constants".into());
    }
    let rhs = report.bound_rhs;
    let margin = report.population_mse - rhs;
    let holds = margin >= -BOUND_REL_TOL * rhs.abs().max(1.0);
    Ok(BoundCheck::Checked { holds, population_mse: report.population_mse, rhs, margin, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub epsilon: f64,
}

/// `Σ_{i,j} ⟨w_i, ŵ_j⟩^k ≤ ε^{k−2}(1 + η_var)·rR/d` for `k ≥ 3`.
///
/// When `epsilon` is `None` the measured maximal correlation is used.
pub fn correlation_bound_check(teacher: &WeightEnsemble, student: &WeightEnsemble, k: u32, epsilon: Option<f64>) -> Result<CorrelationBound> {
    if k < 3 {
        return Err(Error::Precondition(format!("correlation bound needs k >= 3, got {k}")));
    }
    require_unit_pair(teacher, student)?;
    let gram = teacher.gram_with(student)?;
    let measured = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let eps = match epsilon {
        Some(e) if measured > e * (1.0 + 1e-10) => {
            return Err(Error::Precondition(format!("student correlation {measured} exceeds epsilon {e}")))
        }
        Some(e) => e,
        None => measured,
    };
    let eta_var = check_assumptions(teacher).eta_var;
    let lhs: f64 = gram.iter().map(|g| g.powi(k as i32)).sum();
    let rhs = eps.powi(k as i32 - 2) * (1.0 + eta_var) * (teacher.r() * student.r()) as f64 / teacher.d() as f64;
    Ok(CorrelationBound { lhs, rhs, holds: lhs <= rhs + 1e-10, epsilon: eps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationErrorReport {
    /// `min_π Σ_i ‖w_i − ŵ_π(i)‖²`, only when `r = R ≤ 64`.
    pub permutation_error: Option<f64>,
    pub max_correlation: f64,
    pub chamfer_error: f64,
    /// `(1/R) Σ_{i,j} ⟨w_i, ŵ_j⟩³`.
    pub third_order_corr: f64,
}

/// Symmetric average of squared nearest-neighbour distances:
/// `(1/2R) Σ_j min_i ‖ŵ_j − w_i‖² + (1/2r) Σ_i min_j ‖ŵ_j − w_i‖²`.
pub fn chamfer_error(teacher: &WeightEnsemble, student: &WeightEnsemble) -> f64 {
    let (r, big_r) = (teacher.r(), student.r());
    let mut teacher_min = vec![f64::INFINITY; r];
    let mut student_sum = 0.0;
    for s in student.rows() {
        let mut best = f64::INFINITY;
        for (i, t) in teacher.rows().enumerate() {
            let dist = sq_dist(s, t);
            best = best.min(dist);
            teacher_min[i] = teacher_min[i].min(dist);
        }
        student_sum += best;
    }
    student_sum / (2.0 * big_r as f64) + teacher_min.iter().sum::<f64>() / (2.0 * r as f64)
}

pub fn estimation_errors(teacher: &WeightEnsemble, student: &WeightEnsemble) -> Result<EstimationErrorReport> {
    if teacher.d() != student.d() {
        return Err(Error::DimensionMismatch(format!("teacher d = {}, student d = {}", teacher.d(), student.d())));
    }
    let gram = teacher.gram_with(student)?;
    let permutation_error = if teacher.r() == student.r() && teacher.r() <= MAX_ASSIGNMENT_ROWS {
        let n = teacher.r();
        let cost: Vec<f64> = (0..n * n).map(|idx| sq_dist(teacher.row(idx / n), student.row(idx % n))).collect();
        let assignment = min_cost_assignment(&cost, n);
        Some(assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum())
    } else {
        None
    };
    Ok(EstimationErrorReport {
        permutation_error,
        max_correlation: gram.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        chamfer_error: chamfer_error(teacher, student),
        third_order_corr: gram.iter().map(|g| g * g * g).sum::<f64>() / student.r() as f64,
    })
}

/// Hungarian algorithm (potentials form) on a square `n × n` cost matrix.
/// Returns `assignment[i] = j`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Moments and assumption constants bundled for reporting.
pub fn teacher_summary(teacher: &WeightEnsemble, act: &Activation) -> Result<(MomentSummary, AssumptionReport)> {
    Ok((network_moments(act, teacher)?, check_assumptions(teacher)))
}

/// Kernel-form squared distance between moment tensors,
/// `‖Σ a_i^{⊗k} − Σ b_j^{⊗k}‖_F² = P_k(A,A) − 2P_k(A,B) + P_k(B,B)`.
pub fn moment_distance_sq(a: &WeightEnsemble, b: &WeightEnsemble, k: usize) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch(format!("d = {} vs d = {}", a.d(), b.d())));
    }
    let pk = |x: &WeightEnsemble, y: &WeightEnsemble| -> f64 {
        let mut s = 0.0;
        for u in x.rows() {
            for w in y.rows() {
                s += dot(u, w).powi(k as i32);
            }
        }
        s
    };
    Ok(pk(a, a) - 2.0 * pk(a, b) + pk(b, b))
}
