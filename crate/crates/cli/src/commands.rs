use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use tensornet::ensembles::{
    check_assumptions, make_centered_identity, make_constrained_student, make_haar_centered, make_identity, make_random_isotropic,
    make_simplex, AssumptionReport, EnsembleKind, WeightEnsemble, PRNG_NAME,
};
use tensornet::hermite::{hermite_coefficients, Activation, ActivationKind};
use tensornet::io::{ensemble_to_csv, fmt_f64, read_ensemble, write_tensor, TensorSidecar};
use tensornet::linalg::{gaussian_vec, random_unit_vec, seeded_rng};
use tensornet::risk::{estimation_errors, risk_report, verify_thm2_bound, BoundCheck, EstimationErrorReport, RiskReport};
use tensornet::sgd::{figure1_configs, sgd_run, spearman, Scale, SgdConfig, SgdTrace};
use tensornet::tensors::{build_moment_tensor, entry_count, labels_from_tensor, network_output, noisy_labels, DenseTensor, ReductionMode, ReductionSpec};

use crate::config::{EnsembleSection, EnsembleSpec, ReduceSection, RiskSection, RunConfig, SgdSection, StudentSpec};
use crate::output::{csv_row, RunDir};
use crate::{Cli, CliError, Command, EnsembleArgs, HermiteArgs, ReduceArgs, RiskArgs, SgdArgs};

/// Seed-derived streams, kept apart from the ones the library uses internally.
const STUDENT_STREAM_OFFSET: u64 = 1;
const INPUT_STREAM: u64 = 3;
const RANDOM_STUDENT_STREAM: u64 = 4;

pub struct Context {
    pub seed: u64,
    pub seed_flag: Option<u64>,
    pub command: &'static str,
    out: PathBuf,
}

impl Context {
    pub fn new(cli: &Cli, base: &RunConfig, seed: u64) -> Self {
        let command = match cli.command {
            Command::Hermite(_) => "hermite",
            Command::Ensemble(_) => "ensemble",
            Command::Risk(_) => "risk",
            Command::Reduce(_) => "reduce",
            Command::Sgd(_) => "sgd",
            Command::Verify(_) => "verify",
        };
        let out = cli
            .out
            .clone()
            .or_else(|| base.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("tensornet-out").join(command));
        Self { seed, seed_flag: cli.seed, command, out }
    }

    pub fn check_command(&self, base: &RunConfig) -> Result<(), CliError> {
        match &base.command {
            Some(c) if c != self.command => Err(CliError::Config(format!("config is for '{c}', not '{}'", self.command))),
            _ => Ok(()),
        }
    }

    pub fn run_dir(&self) -> Result<RunDir, CliError> {
        RunDir::create(&self.out)
    }

    /// Writes `manifest.json`: the resolved configuration, usable as `--config`.
    pub fn manifest(&self, dir: &RunDir, mut cfg: RunConfig) -> Result<(), CliError> {
        cfg.command = Some(self.command.to_string());
        cfg.seed = Some(self.seed);
        cfg.out_dir = Some(self.out.clone());
        cfg.prng = Some(PRNG_NAME.to_string());
        dir.json("manifest.json", &cfg)
    }
}

fn parse_kind(s: &str) -> Result<EnsembleKind, CliError> {
    s.parse::<EnsembleKind>().map_err(CliError::from)
}

fn activation_override(poly: &Option<Vec<f64>>, beta: Option<f64>) -> Option<ActivationKind> {
    match (poly, beta) {
        (Some(c), _) => Some(ActivationKind::Polynomial { coeffs: c.clone() }),
        (None, Some(beta)) => Some(ActivationKind::ScaledTanh { beta }),
        (None, None) => None,
    }
}

pub fn build_ensemble(spec: &EnsembleSpec, seed: u64) -> Result<WeightEnsemble, CliError> {
    let square = |name: &str| {
        if spec.r != spec.d {
            return Err(CliError::Config(format!("{name} ensembles have r = d (got d={}, r={})", spec.d, spec.r)));
        }
        Ok(())
    };
    Ok(match spec.kind {
        EnsembleKind::Identity => {
            square("identity")?;
            make_identity(spec.d)?
        }
        EnsembleKind::CenteredIdentity => {
            square("centered identity")?;
            make_centered_identity(spec.d)?
        }
        EnsembleKind::Simplex => make_simplex(spec.d, spec.r, seed)?,
        EnsembleKind::RandomIsotropic => make_random_isotropic(spec.d, spec.r, seed)?,
        EnsembleKind::HaarCentered => make_haar_centered(spec.d, spec.r, seed)?,
        EnsembleKind::Custom => return Err(CliError::Config("custom ensembles are read from files, not generated".into())),
    })
}

pub fn hermite(ctx: &Context, base: &RunConfig, a: &HermiteArgs) -> Result<(), CliError> {
    ctx.check_command(base)?;
    let mut sec = base.hermite.clone().unwrap_or_default();
    if let Some(act) = activation_override(&a.poly, a.tanh_beta) {
        sec.activation = act;
    }
    if let Some(k) = a.k {
        sec.truncation = k;
    }
    let act = hermite_coefficients(&sec.activation, sec.truncation)?;
    let table = hermite_table(&act);
    print!("{table}");
    let dir = ctx.run_dir()?;
    dir.text("hermite.csv", &table)?;
    dir.json("hermite.json", &act)?;
    ctx.manifest(&dir, RunConfig { hermite: Some(sec), ..Default::default() })
}

fn hermite_table(act: &Activation) -> String {
    let mut out = format!(
        "# activation={} K={} parity={}\nk,coefficient\n",
        act.kind.label(),
        act.truncation_degree,
        format!("{:?}", act.parity).to_lowercase()
    );
    for (k, c) in act.hermite_coeffs.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", fmt_f64(*c)));
    }
    out.push_str(&format!("# second_moment={}\n# parseval_residual={}\n", fmt_f64(act.second_moment), fmt_f64(act.parseval_residual)));
    out
}

pub fn ensemble(ctx: &Context, base: &RunConfig, a: &EnsembleArgs) -> Result<(), CliError> {
    ctx.check_command(base)?;
    let mut sec: EnsembleSection = base.ensemble.clone().unwrap_or_default();
    if let Some(k) = &a.kind {
        sec.kind = parse_kind(k)?;
    }
    if let Some(d) = a.d {
        sec.d = d;
    }
    if let Some(r) = a.r {
        sec.r = r;
    }
    if a.tensor_order.is_some() {
        sec.tensor_order = a.tensor_order;
    }
    let w = build_ensemble(&sec.spec(), ctx.seed)?;
    let report = check_assumptions(&w);
    let tensor = sec.tensor_order.map(|k| build_moment_tensor(&w, k)).transpose()?;
    println!(
        "{} d={} r={} delta={} eta_avg={} eta_var={} feasible={}",
        w.kind,
        w.d(),
        w.r(),
        fmt_f64(report.delta),
        fmt_f64(report.eta_avg),
        fmt_f64(report.eta_var),
        report.feasible_thm2
    );
    let dir = ctx.run_dir()?;
    dir.text("ensemble.csv", &ensemble_to_csv(&w))?;
    dir.json("assumptions.json", &report)?;
    if let (Some(t), Some(k)) = (&tensor, sec.tensor_order) {
        let side = TensorSidecar { order: k, dim: w.d(), ensemble_kind: w.kind.to_string(), seed: ctx.seed, rows: w.r() };
        write_tensor(&dir.path(&format!("moment_k{k}.bin")), t, &side)?;
    }
    ctx.manifest(&dir, RunConfig { ensemble: Some(sec), ..Default::default() })
}

#[derive(Serialize)]
struct RiskOutput {
    teacher: EnsembleSpec,
    teacher_assumptions: AssumptionReport,
    student_r: usize,
    epsilon: f64,
    activation: Activation,
    risk: RiskReport,
    estimation: EstimationErrorReport,
    bound: BoundCheck,
}

fn make_student(spec: &StudentSpec, teacher: &WeightEnsemble, seed: u64) -> Result<WeightEnsemble, CliError> {
    Ok(match spec {
        StudentSpec::Constrained { r, epsilon } => make_constrained_student(teacher, *r, *epsilon, seed.wrapping_add(STUDENT_STREAM_OFFSET))?,
        StudentSpec::Teacher => teacher.clone(),
        StudentSpec::Random { r } => {
            let mut rng = seeded_rng(seed, RANDOM_STUDENT_STREAM);
            let rows = (0..*r).map(|_| random_unit_vec(&mut rng, teacher.d())).collect();
            WeightEnsemble::from_rows(teacher.d(), rows, EnsembleKind::Custom, seed)?
        }
        StudentSpec::File { path } => read_ensemble(path)?,
    })
}

pub fn risk(ctx: &Context, base: &RunConfig, a: &RiskArgs) -> Result<(), CliError> {
    ctx.check_command(base)?;
    let mut sec: RiskSection = base.risk.clone().unwrap_or_default();
    if let Some(k) = &a.teacher_kind {
        sec.teacher.kind = parse_kind(k)?;
    }
    if let Some(d) = a.d {
        sec.teacher.d = d;
    }
    if let Some(r) = a.r {
        sec.teacher.r = r;
    }
    if a.student_teacher {
        sec.student = StudentSpec::Teacher;
    } else if let Some(path) = &a.student_file {
        sec.student = StudentSpec::File { path: path.clone() };
    } else if let Some(epsilon) = a.epsilon {
        let r = match (&sec.student, a.student_r) {
            (_, Some(r)) => r,
            (StudentSpec::Constrained { r, .. }, None) => *r,
            _ => sec.teacher.r,
        };
        sec.student = StudentSpec::Constrained { r, epsilon };
    } else if let Some(new_r) = a.student_r {
        match &mut sec.student {
            StudentSpec::Constrained { r, .. } | StudentSpec::Random { r } => *r = new_r,
            _ => return Err(CliError::Config("--student-r needs a constrained or random student".into())),
        }
    }
    if let Some(act) = activation_override(&a.poly, a.tanh_beta) {
        sec.activation = act;
    }
    if let Some(k) = a.k {
        sec.truncation = k;
    }
    sec.sweep |= a.sweep;

    let teacher = build_ensemble(&sec.teacher, ctx.seed)?;
    let student = make_student(&sec.student, &teacher, ctx.seed)?;
    if student.d() != teacher.d() {
        return Err(CliError::Config(format!("student d = {} but teacher d = {}", student.d(), teacher.d())));
    }
    let act = hermite_coefficients(&sec.activation, sec.truncation)?;
    let estimation = estimation_errors(&teacher, &student)?;
    let epsilon = match (&sec.epsilon, &sec.student) {
        (Some(e), _) => *e,
        (None, StudentSpec::Constrained { epsilon, .. }) => *epsilon,
        (None, _) => estimation.max_correlation,
    };
    let report = risk_report(&teacher, &student, &act, epsilon)?;
    let bound = verify_thm2_bound(&teacher, &student, &act, epsilon)?;
    println!(
        "population_mse={} baseline_risk={} bound_rhs={} bound_applicable={} bound={}",
        fmt_f64(report.population_mse),
        fmt_f64(report.baseline_risk),
        fmt_f64(report.bound_rhs),
        report.bound_applicable,
        match &bound {
            BoundCheck::Checked { holds, .. } => format!("checked holds={holds}"),
            BoundCheck::NotInScope { reason } => format!("not in scope ({reason})"),
        }
    );
    let sweep = if sec.sweep { Some(bound_sweep(&teacher, &act, ctx.seed)?) } else { None };

    let dir = ctx.run_dir()?;
    let violated = bound.holds() == Some(false);
    dir.json(
        "risk.json",
        &RiskOutput {
            teacher: sec.teacher.clone(),
            teacher_assumptions: check_assumptions(&teacher),
            student_r: student.r(),
            epsilon,
            activation: act,
            risk: report,
            estimation,
            bound,
        },
    )?;
    let mut sweep_violations = 0;
    if let Some((csv, bad)) = sweep {
        dir.text("bound_sweep.csv", &csv)?;
        sweep_violations = bad;
    }
    ctx.manifest(&dir, RunConfig { risk: Some(sec), ..Default::default() })?;
    if violated || sweep_violations > 0 {
        return Err(CliError::Invariant(format!(
            "lower bound violated (main run: {violated}, sweep rows: {sweep_violations})"
        )));
    }
    Ok(())
}

/// Certificate over a grid of correlation levels and student widths.
fn bound_sweep(teacher: &WeightEnsemble, act: &Activation, seed: u64) -> Result<(String, usize), CliError> {
    let d = teacher.d();
    let mut widths = vec![1, (d / 2).max(1), d, 2 * d];
    widths.dedup();
    let grid: Vec<(f64, usize)> = [0.05, 0.1, 0.2, 0.3, 0.5]
        .iter()
        .flat_map(|&e| widths.iter().map(move |&r| (e, r)))
        .collect();
    let rows: Vec<Result<(String, bool), CliError>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(eps, big_r))| {
            let head = format!("{},{big_r}", fmt_f64(eps));
            let student = match make_constrained_student(teacher, big_r, eps, seed.wrapping_add(100 + i as u64)) {
                Ok(s) => s,
                Err(tensornet::Error::Infeasible(_)) => return Ok((format!("{head},infeasible,,,,"), false)),
                Err(e) => return Err(e.into()),
            };
            Ok(match verify_thm2_bound(teacher, &student, act, eps)? {
                BoundCheck::NotInScope { .. } => (format!("{head},not_in_scope,,,,"), false),
                BoundCheck::Checked { holds, population_mse, rhs, margin, .. } => {
                    (format!("{head},checked,{},{holds}", csv_row(&[population_mse, rhs, margin])), !holds)
                }
            })
        })
        .collect();
    let mut csv = String::from("epsilon,student_r,status,population_mse,bound_rhs,margin,holds\n");
    let mut violations = 0;
    for row in rows {
        let (line, bad) = row?;
        csv.push_str(&line);
        csv.push('\n');
        violations += bad as usize;
    }
    Ok((csv, violations))
}

#[derive(Serialize)]
struct ReduceReport {
    mode: ReductionMode,
    ell: usize,
    d: usize,
    r: usize,
    n_inputs: usize,
    max_abs_error: f64,
    max_rel_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_bound_ok: Option<bool>,
    passed: bool,
}

pub fn reduce(ctx: &Context, base: &RunConfig, a: &ReduceArgs) -> Result<(), CliError> {
    ctx.check_command(base)?;
    let mut sec: ReduceSection = base.reduce.clone().unwrap_or_default();
    if let Some(m) = a.mode {
        sec.mode = m;
    }
    if let Some(ell) = a.ell {
        sec.ell = ell;
    }
    if let Some(c) = &a.coeffs {
        sec.coeffs = c.clone();
    }
    if a.p.is_some() {
        sec.p = a.p;
    }
    if a.m.is_some() {
        sec.m = a.m;
    }
    if let Some(k) = &a.teacher_kind {
        sec.teacher.kind = parse_kind(k)?;
    }
    if let Some(d) = a.d {
        sec.teacher.d = d;
    }
    if let Some(r) = a.r {
        sec.teacher.r = r;
    }
    if let Some(n) = a.n_inputs {
        sec.n_inputs = n;
    }
    sec.write_tensors |= a.write_tensors;

    let mode = sec.reduction_mode()?;
    let spec = ReductionSpec { ell: sec.ell, mode, coeffs: sec.coeffs.clone() };
    spec.validate()?;
    let top = if mode == ReductionMode::TwoTensor { sec.ell + 1 } else { sec.ell };
    entry_count(sec.teacher.d, top)?;
    let teacher = build_ensemble(&sec.teacher, ctx.seed)?;
    let mut rng = seeded_rng(ctx.seed, INPUT_STREAM);
    let xs: Vec<Vec<f64>> = (0..sec.n_inputs).map(|_| gaussian_vec(&mut rng, teacher.d())).collect();
    let t_ell = build_moment_tensor(&teacher, sec.ell)?;

    let mut tensors: Vec<(usize, DenseTensor)> = Vec::new();
    let (report, csv) = match mode {
        ReductionMode::Parity | ReductionMode::TwoTensor => {
            let upper = match mode {
                ReductionMode::TwoTensor => Some(build_moment_tensor(&teacher, sec.ell + 1)?),
                _ => None,
            };
            let labels = labels_from_tensor(&spec, &t_ell, upper.as_ref(), &xs)?;
            let mut csv = String::from("j,label,direct,abs_error\n");
            let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
            for (j, (x, y)) in xs.iter().zip(&labels).enumerate() {
                let direct = network_output(&teacher, &spec.coeffs, x);
                let err = (y - direct).abs();
                max_abs = max_abs.max(err);
                max_rel = max_rel.max(err / direct.abs().max(1.0));
                csv.push_str(&format!("{j},{}\n", csv_row(&[*y, direct, err])));
            }
            if let Some(t) = upper {
                tensors.push((sec.ell + 1, t));
            }
            let report = ReduceReport {
                mode,
                ell: sec.ell,
                d: teacher.d(),
                r: teacher.r(),
                n_inputs: xs.len(),
                max_abs_error: max_abs,
                max_rel_error: max_rel,
                delta: None,
                error_bound_ok: None,
                passed: max_rel <= 1e-9,
            };
            (report, csv)
        }
        ReductionMode::Noisy { .. } => {
            let out = noisy_labels(&spec, &t_ell, &xs, &teacher)?;
            let mut csv = String::from("j,label,clean,explicit_error,bound\n");
            let mut max_rel = 0.0f64;
            for j in 0..xs.len() {
                max_rel = max_rel.max((out.labels[j] - out.clean[j]).abs() / out.clean[j].abs().max(1.0));
                csv.push_str(&format!("{j},{}\n", csv_row(&[out.labels[j], out.clean[j], out.explicit_error[j], out.bound[j]])));
            }
            let report = ReduceReport {
                mode,
                ell: sec.ell,
                d: teacher.d(),
                r: teacher.r(),
                n_inputs: xs.len(),
                max_abs_error: out.max_abs_error,
                max_rel_error: max_rel,
                delta: Some(out.delta),
                error_bound_ok: Some(out.error_bound_ok),
                passed: out.error_bound_ok,
            };
            (report, csv)
        }
    };
    tensors.insert(0, (sec.ell, t_ell));
    println!(
        "mode={:?} ell={} max_abs_error={} max_rel_error={} passed={}",
        mode,
        sec.ell,
        fmt_f64(report.max_abs_error),
        fmt_f64(report.max_rel_error),
        report.passed
    );

    let dir = ctx.run_dir()?;
    dir.text("labels.csv", &csv)?;
    dir.json("reduce_report.json", &report)?;
    if sec.write_tensors {
        for (k, t) in &tensors {
            let side = TensorSidecar { order: *k, dim: teacher.d(), ensemble_kind: teacher.kind.to_string(), seed: ctx.seed, rows: teacher.r() };
            write_tensor(&dir.path(&format!("moment_k{k}.bin")), t, &side)?;
        }
    }
    ctx.manifest(&dir, RunConfig { reduce: Some(sec), ..Default::default() })?;
    if !report.passed {
        return Err(CliError::Invariant(format!("reduction check failed: {report:?}", report = serde_json::to_string(&report).unwrap_or_default())));
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    label: String,
    r: usize,
    step_size: f64,
    final_error: Option<f64>,
    final_chamfer: Option<f64>,
    spearman: f64,
    diverged: Option<String>,
}

#[derive(Serialize)]
struct GridChecks {
    best_small_width_final: f64,
    best_small_width_below_0_2: bool,
    wider_is_worse_at_every_step: bool,
    min_spearman: f64,
    all_spearman_at_least_0_8: bool,
}

fn trace_label(cfg: &SgdConfig) -> String {
    format!("r{}_s{}", cfg.r, cfg.step_size)
}

fn summarize(trace: &SgdTrace) -> RunSummary {
    let cfg = &trace.metadata.config;
    let a: Vec<f64> = trace.records.iter().map(|r| r.normalized_gen_error).collect();
    let b: Vec<f64> = trace.records.iter().map(|r| r.chamfer_weight_error).collect();
    RunSummary {
        label: trace_label(cfg),
        r: cfg.r,
        step_size: cfg.step_size,
        final_error: trace.final_error(),
        final_chamfer: b.last().copied(),
        spearman: if a.len() >= 2 { spearman(&a, &b) } else { f64::NAN },
        diverged: trace.diverged.clone(),
    }
}

fn grid_checks(runs: &[RunSummary]) -> Option<GridChecks> {
    let widths: Vec<usize> = {
        let mut w: Vec<usize> = runs.iter().map(|r| r.r).collect();
        w.sort_unstable();
        w.dedup();
        w
    };
    let (small, wide) = (*widths.first()?, *widths.get(1)?);
    let final_of = |r: usize, s: f64| runs.iter().find(|x| x.r == r && x.step_size == s).and_then(|x| x.final_error);
    let best = runs.iter().filter(|x| x.r == small).filter_map(|x| x.final_error).fold(f64::INFINITY, f64::min);
    let ordered = runs
        .iter()
        .filter(|x| x.r == small)
        .all(|x| matches!((final_of(small, x.step_size), final_of(wide, x.step_size)), (Some(a), Some(b)) if b > a));
    let min_rho = runs.iter().map(|x| x.spearman).fold(f64::INFINITY, f64::min);
    Some(GridChecks {
        best_small_width_final: best,
        best_small_width_below_0_2: best < 0.2,
        wider_is_worse_at_every_step: ordered,
        min_spearman: min_rho,
        all_spearman_at_least_0_8: min_rho >= 0.8,
    })
}

pub fn sgd(ctx: &Context, base: &RunConfig, a: &SgdArgs) -> Result<(), CliError> {
    ctx.check_command(base)?;
    let mut sec: SgdSection = base.sgd.clone().unwrap_or_default();
    if let Some(s) = &a.scale {
        sec.scale = Some(s.parse::<Scale>()?);
        sec.run = None;
    }
    let single_flags = a.d.is_some() || a.r.is_some() || a.steps.is_some() || a.step_size.is_some() || a.window.is_some() || a.step_scaling.is_some();
    if single_flags {
        if a.scale.is_some() {
            return Err(CliError::Config("--scale runs the fixed grid; drop the single-run flags".into()));
        }
        let mut run = sec.run.take().unwrap_or_else(|| SgdConfig::new(50, 50, 200_000, 0.05, ctx.seed));
        if let Some(d) = a.d {
            run.d = d;
        }
        if let Some(r) = a.r {
            run.r = r;
        }
        if let Some(n) = a.steps {
            run.n_steps = n;
            run.window = run.window.min(n.max(1));
        }
        if let Some(s) = a.step_size {
            run.step_size = s;
        }
        if let Some(w) = a.window {
            run.window = w;
        }
        if let Some(s) = &a.step_scaling {
            run.step_scaling = serde_json::from_value(serde_json::Value::String(s.clone()))
                .map_err(|_| CliError::Config(format!("unknown step scaling '{s}' (expected raw or width_dim)")))?;
        }
        sec.scale = None;
        sec.run = Some(run);
    }
    let configs = match (&sec.scale, &mut sec.run) {
        (Some(scale), _) => figure1_configs(*scale, ctx.seed),
        (None, Some(run)) => {
            if let Some(s) = ctx.seed_flag {
                run.seed = s;
            }
            vec![run.clone()]
        }
        (None, None) => return Err(CliError::Config("sgd needs either a scale or a run".into())),
    };
    for cfg in &configs {
        cfg.validate()?;
    }
    let traces: Vec<SgdTrace> = configs.par_iter().map(sgd_run).collect::<tensornet::Result<_>>()?;

    let dir = ctx.run_dir()?;
    let mut summaries = Vec::new();
    let mut timing = serde_json::Map::new();
    for trace in &traces {
        let s = summarize(trace);
        println!(
            "{} final_error={} final_chamfer={} spearman={} diverged={}",
            s.label,
            s.final_error.map(fmt_f64).unwrap_or_default(),
            s.final_chamfer.map(fmt_f64).unwrap_or_default(),
            fmt_f64(s.spearman),
            s.diverged.as_deref().unwrap_or("no")
        );
        dir.text(&format!("trace_{}.csv", s.label), &trace.to_csv())?;
        dir.json(&format!("trace_{}.json", s.label), trace)?;
        timing.insert(s.label.clone(), serde_json::json!(trace.wall_seconds));
        summaries.push(s);
    }
    let checks = if sec.scale.is_some() { grid_checks(&summaries) } else { None };
    dir.json("summary.json", &serde_json::json!({ "runs": summaries, "grid_checks": checks }))?;
    // Wall times vary between runs, so they stay out of the deterministic artifacts.
    dir.json("timing.json", &timing)?;
    ctx.manifest(&dir, RunConfig { sgd: Some(sec), ..Default::default() })?;
    let diverged: Vec<&str> = summaries.iter().filter(|s| s.diverged.is_some()).map(|s| s.label.as_str()).collect();
    if !diverged.is_empty() {
        return Err(CliError::Guard(format!("divergence guard tripped for {}", diverged.join(", "))));
    }
    Ok(())
}
