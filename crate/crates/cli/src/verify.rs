//! The property suite behind `tensornet verify`.
//!
//! Every check is seeded from the run seed, so two runs from the same
//! manifest write byte-identical artifacts. Nothing time-dependent is written.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use tensornet::ensembles::{
    check_assumptions, make_centered_identity, make_constrained_student, make_identity, make_random_isotropic, make_simplex, EnsembleKind,
    WeightEnsemble,
};
use tensornet::hermite::{hermite_coefficients, Activation, ActivationKind, Parity};
use tensornet::io::fmt_f64;
use tensornet::linalg::{gaussian_vec, random_unit_vec, seeded_rng};
use tensornet::risk::{correlation_bound_check, gram_power_sums, population_mse, verify_thm2_bound, BoundCheck};
use tensornet::sgd::{sgd_run, InitKind, SgdConfig, SgdRunner, StepScaling};
use tensornet::tensors::{
    build_moment_tensor, contract_pair, labels_from_tensor, network_output, noisy_labels, ReductionMode, ReductionSpec,
};

use crate::commands::Context;
use crate::config::{RunConfig, VerifySection};
use crate::output::csv_row;
use crate::{CliError, VerifyArgs};

const MC_CONFIGS: usize = 10;
const MC_STREAM: u64 = 10;
const MC_SAMPLE_STREAM: u64 = 1000;
const KERNEL_STREAM: u64 = 20;
const REDUCE_STREAM: u64 = 30;
const BOUND_STREAM: u64 = 40;
const CORR_STREAM: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Status {
    Pass,
    Fail,
    /// Recorded but not counted as a failure; the reason is in `detail`.
    KnownIssue,
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    status: Status,
    detail: Value,
}

fn check(name: &'static str, passed: bool, detail: Value) -> Check {
    Check { name, status: if passed { Status::Pass } else { Status::Fail }, detail }
}

pub fn run(ctx: &Context, base: &RunConfig, a: &VerifyArgs) -> Result<(), CliError> {
    ctx.check_command(base)?;
    let mut sec: VerifySection = base.verify.clone().unwrap_or_default();
    if let Some(n) = a.mc_samples {
        sec.mc_samples = n;
    }
    if sec.mc_samples < 2 || sec.bound_configs == 0 || sec.corr_instances == 0 {
        return Err(CliError::Config("verify needs mc_samples >= 2 and positive sweep sizes".into()));
    }
    let seed = ctx.seed;

    let mut checks = vec![ensemble_constants()?];
    let (mc, mc_csv) = mc_risk(seed, sec.mc_samples)?;
    checks.push(mc);
    checks.push(kernel_tensor(seed)?);
    checks.push(contraction()?);
    checks.push(reduction(seed)?);
    checks.push(noisy(seed)?);
    let (bound, bound_csv) = bound_sweep(seed, sec.bound_configs)?;
    checks.push(bound);
    let (corr, corr_csv) = correlation_sweep(seed, sec.corr_instances)?;
    checks.push(corr);
    let (herm, herm_csv) = hermite_suite()?;
    checks.extend(herm);
    checks.push(sgd_invariants(seed)?);

    let failed: Vec<&str> = checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name).collect();
    for c in &checks {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::KnownIssue => "KNOWN",
        };
        println!("{tag} {}", c.name);
    }

    let dir = ctx.run_dir()?;
    dir.json("verify.json", &json!({ "seed": seed, "passed": failed.is_empty(), "checks": checks }))?;
    dir.text("mc_risk.csv", &mc_csv)?;
    dir.text("bound_sweep.csv", &bound_csv)?;
    dir.text("correlation_sweep.csv", &corr_csv)?;
    dir.text("hermite_checks.csv", &herm_csv)?;
    ctx.manifest(&dir, RunConfig { verify: Some(sec), ..Default::default() })?;
    if !failed.is_empty() {
        return Err(CliError::Invariant(format!("failed checks: {}", failed.join(", "))));
    }
    Ok(())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Closed-form constants of the structured ensembles. The centered identity
/// is checked against its exact values and against the looser published ones.
fn ensemble_constants() -> Result<Check, CliError> {
    let mut rows = Vec::new();
    let mut ok = true;
    for d in [8usize, 16, 32] {
        let df = d as f64;
        let id = check_assumptions(&make_identity(d)?);
        let id_ok = id.delta == 0.0 && close(id.eta_avg, 1.0, 1e-12) && close(id.eta_var, 0.0, 1e-12);
        let c = check_assumptions(&make_centered_identity(d)?);
        let published = ((df + 1.0) / (df * (df - 1.0)), 0.0, 2.0);
        let c_ok = close(c.delta, 1.0 / (df - 1.0), 1e-8)
            && close(c.eta_avg, 0.0, 1e-8)
            && close(c.eta_var, 1.0, 1e-8)
            && c.delta <= published.0 + 1e-8
            && c.eta_var <= published.2 + 1e-8;
        let s = check_assumptions(&make_simplex(d, d + 1, 0)?);
        let s_ok = close(s.delta, 1.0 / df, 1e-8) && close(s.eta_avg, 0.0, 1e-8) && close(s.eta_var, 0.0, 1e-8);
        ok &= id_ok && c_ok && s_ok;
        rows.push(json!({
            "d": d,
            "identity": [id.delta, id.eta_avg, id.eta_var],
            "centered_identity": [c.delta, c.eta_avg, c.eta_var],
            "centered_identity_published_upper": [published.0, published.1, published.2],
            "simplex": [s.delta, s.eta_avg, s.eta_var],
        }));
    }
    Ok(check("ensemble_constants", ok, json!(rows)))
}

fn random_rows<R: Rng>(rng: &mut R, d: usize, r: usize) -> Result<WeightEnsemble, CliError> {
    let rows = (0..r).map(|_| random_unit_vec(rng, d)).collect();
    Ok(WeightEnsemble::from_rows(d, rows, EnsembleKind::Custom, 0)?)
}

/// Closed-form population MSE against a Monte Carlo estimate.
fn mc_risk(seed: u64, samples: usize) -> Result<(Check, String), CliError> {
    let mut rng = seeded_rng(seed, MC_STREAM);
    let mut configs = Vec::new();
    for _ in 0..MC_CONFIGS {
        let d = rng.random_range(2..=10);
        let r = rng.random_range(1..=12);
        let big_r = rng.random_range(1..=12);
        let deg = rng.random_range(1..=5);
        let coeffs: Vec<f64> = (0..=deg).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = random_rows(&mut rng, d, r)?;
        let s = random_rows(&mut rng, d, big_r)?;
        configs.push((t, s, coeffs));
    }
    let results: Vec<Result<Vec<f64>, CliError>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, (t, s, coeffs))| {
            let act = hermite_coefficients(&ActivationKind::Polynomial { coeffs: coeffs.clone() }, coeffs.len() - 1)?;
            let exact = population_mse(t, s, &act)?.population_mse;
            let mut srng = seeded_rng(seed, MC_SAMPLE_STREAM + i as u64);
            let (mut mean, mut m2) = (0.0f64, 0.0f64);
            for n in 1..=samples {
                let x = gaussian_vec(&mut srng, t.d());
                let e = network_output(t, coeffs, &x) - network_output(s, coeffs, &x);
                let v = e * e;
                let delta = v - mean;
                mean += delta / n as f64;
                m2 += delta * (v - mean);
            }
            let se = (m2 / (samples as f64 - 1.0) / samples as f64).sqrt();
            let z = if se > 0.0 { (exact - mean) / se } else if exact == mean { 0.0 } else { f64::INFINITY };
            Ok(vec![t.d() as f64, t.r() as f64, s.r() as f64, (coeffs.len() - 1) as f64, exact, mean, se, z])
        })
        .collect();
    let mut csv = String::from("config,d,r,student_r,degree,exact,mc_mean,mc_stderr,z\n");
    let mut worst = 0.0f64;
    for (i, row) in results.into_iter().enumerate() {
        let row = row?;
        worst = worst.max(row[7].abs());
        csv.push_str(&format!("{i},{},{},{},{},{}\n", row[0], row[1], row[2], row[3], csv_row(&row[4..])));
    }
    Ok((check("population_risk_vs_monte_carlo", worst <= 4.0, json!({ "samples": samples, "max_abs_z": worst })), csv))
}

/// `‖T_a − T_b‖_F²` from materialized tensors against Gram power sums.
fn kernel_tensor(seed: u64) -> Result<Check, CliError> {
    let mut rng = seeded_rng(seed, KERNEL_STREAM);
    let mut worst = 0.0f64;
    for k in [3usize, 4] {
        for _ in 0..5 {
            let r = rng.random_range(1..=6);
            let big_r = rng.random_range(1..=6);
            let a = random_rows(&mut rng, 5, r)?;
            let b = random_rows(&mut rng, 5, big_r)?;
            let explicit = build_moment_tensor(&a, k)?.frobenius_dist_sq(&build_moment_tensor(&b, k)?)?;
            let kernel = gram_power_sums(&a, &a, k)?.get(k) - 2.0 * gram_power_sums(&a, &b, k)?.get(k) + gram_power_sums(&b, &b, k)?.get(k);
            worst = worst.max((explicit - kernel).abs() / explicit.abs().max(1.0));
        }
    }
    Ok(check("kernel_tensor_identity", worst <= 1e-10, json!({ "max_rel_error": worst })))
}

fn contraction() -> Result<Check, CliError> {
    let w = make_simplex(4, 5, 0)?;
    let gap = contract_pair(&build_moment_tensor(&w, 5)?)?.max_abs_diff(&build_moment_tensor(&w, 3)?)?;
    Ok(check("contraction_identity", gap <= 1e-12, json!({ "max_abs_error": gap })))
}

fn inputs(seed: u64, stream: u64, d: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed, stream);
    (0..n).map(|_| gaussian_vec(&mut rng, d)).collect()
}

fn reduction(seed: u64) -> Result<Check, CliError> {
    let w = make_random_isotropic(8, 12, seed)?;
    let xs = inputs(seed, REDUCE_STREAM, 8, 100);
    let t3 = build_moment_tensor(&w, 3)?;
    let t4 = build_moment_tensor(&w, 4)?;
    let cases = [
        (ReductionSpec { ell: 3, mode: ReductionMode::Parity, coeffs: vec![0.0, 0.8, 0.0, -0.3] }, None),
        (ReductionSpec { ell: 3, mode: ReductionMode::TwoTensor, coeffs: vec![0.4, -1.0, 0.7, 0.3, -0.2] }, Some(&t4)),
    ];
    let mut errs = Vec::new();
    for (spec, upper) in &cases {
        let labels = labels_from_tensor(spec, &t3, *upper, &xs)?;
        let worst = xs
            .iter()
            .zip(&labels)
            .map(|(x, y)| {
                let direct = network_output(&w, &spec.coeffs, x);
                (y - direct).abs() / direct.abs().max(1.0)
            })
            .fold(0.0, f64::max);
        errs.push(worst);
    }
    let ok = errs.iter().all(|e| *e <= 1e-9);
    Ok(check("reduction_round_trip", ok, json!({ "parity_max_rel_error": errs[0], "two_tensor_max_rel_error": errs[1] })))
}

fn noisy(seed: u64) -> Result<Check, CliError> {
    let spec = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 2, m: 3 }, coeffs: vec![1.0, 1.0] };
    let xs = inputs(seed, REDUCE_STREAM + 1, 9, 100);
    let simplex = make_simplex(9, 10, seed)?;
    let out = noisy_labels(&spec, &build_moment_tensor(&simplex, 4)?, &xs, &simplex)?;
    let violations = (0..xs.len()).filter(|&j| out.explicit_error[j].abs() > out.bound[j] + 1e-9).count();
    let eye = make_identity(9)?;
    let control = noisy_labels(&spec, &build_moment_tensor(&eye, 4)?, &xs, &eye)?;
    let ok = violations == 0 && out.error_bound_ok && control.max_abs_error == 0.0;
    Ok(check(
        "noisy_reduction_bound",
        ok,
        json!({ "violations": violations, "delta": out.delta, "max_abs_error": out.max_abs_error, "control_max_abs_error": control.max_abs_error }),
    ))
}

/// Monomial coefficients of `h₂ + h₄` (orthonormal Hermite).
pub fn even_h2_h4() -> Vec<f64> {
    let (s2, s24) = (2f64.sqrt(), 24f64.sqrt());
    vec![-1.0 / s2 + 3.0 / s24, 0.0, 1.0 / s2 - 6.0 / s24, 0.0, 1.0 / s24]
}

/// Random draws from the teacher/epsilon/activation grid until `target`
/// configurations are in scope; every draw is logged.
fn bound_sweep(seed: u64, target: usize) -> Result<(Check, String), CliError> {
    let acts = [
        hermite_coefficients(&ActivationKind::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 1.0] }, 3)?,
        hermite_coefficients(&ActivationKind::Polynomial { coeffs: even_h2_h4() }, 4)?,
    ];
    let mut rng = seeded_rng(seed, BOUND_STREAM);
    let mut csv = String::from("draw,teacher,d,r,student_r,epsilon,activation,status,population_mse,bound_rhs,margin,holds\n");
    let (mut checked, mut violations, mut draws) = (0usize, 0usize, 0usize);
    while checked < target && draws < 40 * target {
        let simplex = rng.random_bool(0.5);
        let d = if rng.random_bool(0.5) { 16 } else { 32 };
        let eps = [0.05, 0.1, 0.2][rng.random_range(0..3)];
        let ai = rng.random_range(0..2);
        let big_r = rng.random_range(1..=2 * d);
        let sub_seed: u64 = rng.random();
        let (name, teacher) = if simplex {
            ("simplex", make_simplex(d, d + 1, sub_seed)?)
        } else {
            ("centered_identity", make_centered_identity(d)?)
        };
        let head = format!("{draws},{name},{d},{},{big_r},{},{}", teacher.r(), fmt_f64(eps), if ai == 0 { "x3" } else { "h2+h4" });
        draws += 1;
        let student = match make_constrained_student(&teacher, big_r, eps, sub_seed.wrapping_add(1)) {
            Ok(s) => s,
            Err(tensornet::Error::Infeasible(_)) => {
                csv.push_str(&format!("{head},infeasible,,,,\n"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match verify_thm2_bound(&teacher, &student, &acts[ai], eps)? {
            BoundCheck::NotInScope { .. } => csv.push_str(&format!("{head},not_in_scope,,,,\n")),
            BoundCheck::Checked { holds, population_mse, rhs, margin, .. } => {
                checked += 1;
                violations += !holds as usize;
                csv.push_str(&format!("{head},checked,{},{holds}\n", csv_row(&[population_mse, rhs, margin])));
            }
        }
    }
    let ok = checked == target && violations == 0;
    Ok((check("lower_bound_sweep", ok, json!({ "in_scope": checked, "draws": draws, "violations": violations })), csv))
}

fn correlation_sweep(seed: u64, target: usize) -> Result<(Check, String), CliError> {
    let mut rng = seeded_rng(seed, CORR_STREAM);
    let mut csv = String::from("instance,teacher,d,r,student_r,k,epsilon,lhs,rhs,holds\n");
    let (mut done, mut violations, mut attempts) = (0usize, 0usize, 0usize);
    while done < target && attempts < 20 * target {
        attempts += 1;
        let d = [9usize, 12, 16][rng.random_range(0..3)];
        let sub_seed: u64 = rng.random();
        let (name, teacher) = match rng.random_range(0..3) {
            0 => ("simplex", make_simplex(d, d + 1, sub_seed)?),
            1 => ("centered_identity", make_centered_identity(d)?),
            _ => ("random_isotropic", make_random_isotropic(d, rng.random_range(2..=2 * d), sub_seed)?),
        };
        let eps = rng.random_range(0.3..0.8);
        let big_r = rng.random_range(1..=8);
        let k = rng.random_range(3..=5u32);
        let student = match make_constrained_student(&teacher, big_r, eps, sub_seed.wrapping_add(1)) {
            Ok(s) => s,
            Err(tensornet::Error::Infeasible(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let c = correlation_bound_check(&teacher, &student, k, Some(eps))?;
        violations += !c.holds as usize;
        csv.push_str(&format!("{done},{name},{d},{},{big_r},{k},{},{}\n", teacher.r(), csv_row(&[eps, c.lhs, c.rhs]), c.holds));
        done += 1;
    }
    let ok = done == target && violations == 0;
    Ok((check("correlation_bound_sweep", ok, json!({ "instances": done, "violations": violations })), csv))
}

fn hermite_suite() -> Result<(Vec<Check>, String), CliError> {
    let cube = hermite_coefficients(&ActivationKind::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 1.0] }, 6)?;
    let cube_ok = close(cube.coeff(1), 3.0, 1e-10) && close(cube.coeff(3), 6f64.sqrt(), 1e-10);
    let tanh: Activation = hermite_coefficients(&ActivationKind::ScaledTanh { beta: 2.5 }, 40)?;
    let max_even = tanh.hermite_coeffs.iter().step_by(2).fold(0.0f64, |m, c| m.max(c.abs()));
    let even_ok = max_even < 1e-12 && tanh.parity == Parity::Odd && tanh.parseval_residual >= 0.0;
    let mut csv = String::from("activation,k,coefficient\n");
    for (label, act) in [("x3", &cube), ("tanh2.5", &tanh)] {
        for (k, c) in act.hermite_coeffs.iter().enumerate() {
            csv.push_str(&format!("{label},{k},{}\n", fmt_f64(*c)));
        }
    }
    csv.push_str(&format!("tanh2.5,parseval_residual,{}\n", fmt_f64(tanh.parseval_residual)));
    let residual = Check {
        name: "tanh_parseval_residual_below_1e-4",
        status: if tanh.parseval_residual < 1e-4 { Status::Pass } else { Status::KnownIssue },
        detail: json!({
            "residual": tanh.parseval_residual,
            "note": "tanh(2.5x) keeps about 2.6e-4 of its energy above degree 40; the residual is reported, not forced",
        }),
    };
    Ok((
        vec![
            check("hermite_cubic", cube_ok, json!({ "c1": cube.coeff(1), "c3": cube.coeff(3) })),
            check("hermite_tanh_odd", even_ok, json!({ "max_even_coeff": max_even })),
            residual,
        ],
        csv,
    ))
}

fn sgd_invariants(seed: u64) -> Result<Check, CliError> {
    let mut cfg = SgdConfig::new(6, 6, 3000, 0.05, seed);
    cfg.window = 500;
    cfg.step_scaling = StepScaling::WidthDim;
    let a = sgd_run(&cfg)?;
    let b = sgd_run(&cfg)?;
    let deterministic = a.records == b.records && a.student == b.student;

    let mut control = cfg.clone();
    control.init_kind = InitKind::Teacher;
    let flat = sgd_run(&control)?.records.iter().all(|r| r.normalized_gen_error == 0.0 && r.chamfer_weight_error == 0.0);

    let mut runner = SgdRunner::new(&cfg)?;
    let mut sum = vec![0.0; runner.raw.as_flat().len()];
    let mut polyak_gap = 0.0f64;
    for j in 1..=1000usize {
        for (s, v) in sum.iter_mut().zip(runner.raw.as_flat()) {
            *s += v;
        }
        if [1, 10, 1000].contains(&j) {
            let gap = runner.averaged.as_flat().iter().zip(&sum).map(|(a, s)| (a - s / j as f64).abs()).fold(0.0, f64::max);
            polyak_gap = polyak_gap.max(gap);
        }
        runner.step();
    }
    let ok = deterministic && flat && polyak_gap <= 1e-10;
    Ok(check("sgd_invariants", ok, json!({ "deterministic": deterministic, "teacher_init_flat": flat, "polyak_max_gap": polyak_gap })))
}
