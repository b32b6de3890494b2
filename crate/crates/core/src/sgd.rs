//! Teacher–student SGD on Gaussian inputs with Polyak–Ruppert averaging.
//!
//! Each step draws `x ~ N(0, I_d)`, scores the averaged student on it, then
//! takes the plain squared-loss gradient step on the raw student weights.

use std::time::Instant;

use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{
    make_haar_centered, make_random_isotropic, make_simplex, EnsembleKind, WeightEnsemble, PRNG_NAME,
};
use crate::error::{Error, Result};
use crate::hermite::ActivationKind;
use crate::linalg::{dot, gaussian_vec, norm, random_unit_vec, seeded_rng};
use crate::quadrature::GaussHermite;
use crate::risk::chamfer_error;

/// Paper-scale run length.
pub const FULL_STEPS: usize = 5_000_000;
pub const DESK_STEPS: usize = 200_000;
pub const DEFAULT_WINDOW: usize = 10_000;
pub const DESK_STEP_GRID: [f64; 3] = [0.01, 0.05, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// Stacked Haar blocks, centered, not renormalized.
    HaarCentered,
    Simplex,
    RandomIsotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Rows i.i.d. uniform on the unit sphere.
    UniformSphere,
    /// Rows i.i.d. `N(0, I_d / d)`.
    Gaussian,
    /// Start at the teacher (control runs).
    Teacher,
}

/// How the configured step size maps to the multiplier of the raw gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaling {
    /// The gradient is multiplied by `s` as given.
    Raw,
    /// The gradient is multiplied by `s / (R·d)`.
    WidthDim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub d: usize,
    pub r: usize,
    /// Student width `R`; defaults to `r`.
    #[serde(default)]
    pub student_r: Option<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActivationKind,
    pub n_steps: usize,
    pub step_size: f64,
    #[serde(default = "default_scaling")]
    pub step_scaling: StepScaling,
    #[serde(default = "default_window")]
    pub window: usize,
    pub seed: u64,
    #[serde(default = "default_teacher")]
    pub teacher_kind: TeacherKind,
    #[serde(default = "default_init")]
    pub init_kind: InitKind,
    /// Abort when the windowed raw-iterate MSE exceeds this multiple of the first window's.
    #[serde(default = "default_divergence_factor")]
    pub divergence_factor: f64,
    /// Abort when a raw student row grows beyond this norm.
    #[serde(default = "default_norm_guard")]
    pub norm_guard: f64,
}

fn default_activation() -> ActivationKind {
    ActivationKind::ScaledTanh { beta: 2.5 }
}
fn default_scaling() -> StepScaling {
    StepScaling::Raw
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_teacher() -> TeacherKind {
    TeacherKind::HaarCentered
}
fn default_init() -> InitKind {
    InitKind::UniformSphere
}
fn default_divergence_factor() -> f64 {
    1e6
}
fn default_norm_guard() -> f64 {
    1e3
}

impl SgdConfig {
    pub fn new(d: usize, r: usize, n_steps: usize, step_size: f64, seed: u64) -> Self {
        Self {
            d,
            r,
            student_r: None,
            activation: default_activation(),
            n_steps,
            step_size,
            step_scaling: default_scaling(),
            window: DEFAULT_WINDOW.min(n_steps.max(1)),
            seed,
            teacher_kind: default_teacher(),
            init_kind: default_init(),
            divergence_factor: default_divergence_factor(),
            norm_guard: default_norm_guard(),
        }
    }

    pub fn student_width(&self) -> usize {
        self.student_r.unwrap_or(self.r)
    }

    /// Multiplier actually applied to the raw gradient.
    pub fn effective_step(&self) -> f64 {
        match self.step_scaling {
            StepScaling::Raw => self.step_size,
            StepScaling::WidthDim => self.step_size / (self.student_width() * self.d) as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.d == 0 || self.r == 0 || self.student_width() == 0 {
            return bad("d, r and R must be positive".into());
        }
        if self.window == 0 || self.n_steps < self.window {
            return bad(format!("need 0 < window <= n_steps (window {}, n_steps {})", self.window, self.n_steps));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be finite and non-negative, got {}", self.step_size));
        }
        if !(self.divergence_factor > 0.0 && self.norm_guard > 0.0) {
            return bad("divergence guards must be positive".into());
        }
        if let ActivationKind::ScaledTanh { beta } = self.activation {
            if !(beta > 0.0 && beta.is_finite()) {
                return bad(format!("tanh slope must be positive, got {beta}"));
            }
        }
        if self.teacher_kind == TeacherKind::HaarCentered && self.r % self.d != 0 {
            return bad(format!("the stacked Haar teacher needs r to be a multiple of d (d={}, r={})", self.d, self.r));
        }
        Ok(())
    }
}

/// Stacked Haar blocks, centered, rows left unnormalized.
pub fn make_teacher_sec6(d: usize, r: usize, seed: u64) -> Result<WeightEnsemble> {
    make_haar_centered(d, r, seed)
}

pub fn make_teacher(kind: TeacherKind, d: usize, r: usize, seed: u64) -> Result<WeightEnsemble> {
    match kind {
        TeacherKind::HaarCentered => make_teacher_sec6(d, r, seed),
        TeacherKind::Simplex => make_simplex(d, r, seed),
        TeacherKind::RandomIsotropic => make_random_isotropic(d, r, seed),
    }
}

/// Population least squares of `y(x) = Σ σ(⟨w_i, x⟩)` onto `{1, ‖x‖²}`.
///
/// Row `i` contributes through the Hermite coefficients of `z ↦ σ(‖w_i‖ z)`:
/// `E y = Σ τ̂_{i,0}` and `Cov(y, ‖x‖²) = √2 Σ τ̂_{i,2}`, with `Var ‖x‖² = 2d`.
pub fn least_squares_baseline(teacher: &WeightEnsemble, act: &ActivationKind) -> (f64, f64) {
    let rule = GaussHermite::cached(crate::hermite::DEFAULT_QUADRATURE_NODES);
    let mut mean = 0.0;
    let mut cov = 0.0;
    for row in teacher.rows() {
        let n = norm(row);
        mean += rule.expect(|z| act.eval(n * z));
        cov += rule.expect(|z| act.eval(n * z) * (z * z - 1.0));
    }
    let d = teacher.d() as f64;
    let b = cov / (2.0 * d);
    (mean - b * d, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub step_index: usize,
    /// `Σ (y − ŷ)² / Σ (y − y_LS)²` over the window, `ŷ` from the averaged student.
    pub normalized_gen_error: f64,
    pub chamfer_weight_error: f64,
    /// Mean of `(y − ŷ_raw)²` over the window, `ŷ_raw` from the raw iterate.
    pub raw_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub config: SgdConfig,
    pub prng: String,
    pub baseline_a: f64,
    pub baseline_b: f64,
    pub initialization: String,
    pub metric_timing: String,
    pub averaging: String,
    pub window_statistic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdTrace {
    pub records: Vec<WindowRecord>,
    pub metadata: TraceMetadata,
    /// Set when a divergence guard stopped the run early.
    pub diverged: Option<String>,
    /// Final averaged student.
    #[serde(skip)]
    pub student: Option<WeightEnsemble>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl SgdTrace {
    pub fn final_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.normalized_gen_error)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,norm_gen_err,chamfer_err,raw_mse\n");
        for rec in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                rec.step_index,
                crate::io::fmt_f64(rec.normalized_gen_error),
                crate::io::fmt_f64(rec.chamfer_weight_error),
                crate::io::fmt_f64(rec.raw_mse)
            ));
        }
        out
    }
}

/// Step-by-step SGD state. Exposed so the averaging can be checked directly.
#[derive(Debug, Clone)]
pub struct SgdRunner {
    pub teacher: WeightEnsemble,
    pub raw: WeightEnsemble,
    pub averaged: WeightEnsemble,
    act: ActivationKind,
    step_size: f64,
    baseline: (f64, f64),
    steps_done: usize,
    data_rng: ChaCha20Rng,
    proj: Vec<f64>,
}

/// Outcome of one step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub sq_err_averaged: f64,
    pub sq_err_baseline: f64,
    pub sq_err_raw: f64,
}

fn network(w: &WeightEnsemble, act: &ActivationKind, x: &[f64]) -> f64 {
    w.rows().map(|row| act.eval(dot(row, x))).sum()
}

impl SgdRunner {
    pub fn new(config: &SgdConfig) -> Result<Self> {
        config.validate()?;
        let teacher = make_teacher(config.teacher_kind, config.d, config.r, config.seed)?;
        let mut init_rng = seeded_rng(config.seed, 1);
        let big_r = config.student_width();
        let raw = match config.init_kind {
            InitKind::UniformSphere => {
                let rows = (0..big_r).map(|_| random_unit_vec(&mut init_rng, config.d)).collect();
                WeightEnsemble::from_rows(config.d, rows, EnsembleKind::Custom, config.seed)?
            }
            InitKind::Gaussian => {
                let scale = 1.0 / (config.d as f64).sqrt();
                let data = gaussian_vec(&mut init_rng, big_r * config.d).into_iter().map(|v| v * scale).collect();
                WeightEnsemble::from_flat(config.d, data, EnsembleKind::Custom, config.seed)?
            }
            InitKind::Teacher => {
                if big_r != config.r {
                    return Err(Error::InvalidSpec("teacher initialization needs R = r".into()));
                }
                teacher.clone()
            }
        };
        Self::from_parts(teacher, raw, config.activation.clone(), config.effective_step(), config.seed)
    }

    /// Runner with explicit teacher and initial student.
    pub fn from_parts(teacher: WeightEnsemble, student: WeightEnsemble, act: ActivationKind, step_size: f64, seed: u64) -> Result<Self> {
        if teacher.d() != student.d() {
            return Err(Error::DimensionMismatch(format!("teacher d = {}, student d = {}", teacher.d(), student.d())));
        }
        let baseline = least_squares_baseline(&teacher, &act);
        let data_rng = seeded_rng(seed, 2);
        let proj = vec![0.0; student.r()];
        Ok(Self { teacher, averaged: student.clone(), raw: student, act, step_size, baseline, steps_done: 0, data_rng, proj })
    }

    pub fn baseline(&self) -> (f64, f64) {
        self.baseline
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn draw_input(&mut self) -> Vec<f64> {
        gaussian_vec(&mut self.data_rng, self.teacher.d())
    }

    /// Scores the averaged student on `x`, applies one gradient step to the
    /// raw iterate, then folds the new iterate into the running average.
    ///
    /// Before the call `averaged` is the mean of the raw iterates
    /// `ŵ^(0), …, ŵ^(j−1)` that have been in effect so far.
    pub fn step_on(&mut self, x: &[f64]) -> StepMetrics {
        let y = network(&self.teacher, &self.act, x);
        let y_hat_avg = network(&self.averaged, &self.act, x);
        let (a, b) = self.baseline;
        let y_ls = a + b * dot(x, x);

        for (p, row) in self.proj.iter_mut().zip(self.raw.rows()) {
            *p = dot(row, x);
        }
        let y_hat_raw: f64 = self.proj.iter().map(|&z| self.act.eval(z)).sum();
        let residual = y_hat_raw - y;
        let d = self.raw.d();
        for (i, &z) in self.proj.iter().enumerate() {
            let g = self.step_size * 2.0 * residual * self.act.derivative(z);
            if g != 0.0 {
                self.raw.row_mut(i).iter_mut().zip(x).for_each(|(w, xv)| *w -= g * xv);
            }
        }
        self.steps_done += 1;
        let t = (self.steps_done + 1) as f64;
        for (avg, raw) in self.averaged.as_flat_mut().chunks_exact_mut(d).zip(self.raw.as_flat().chunks_exact(d)) {
            avg.iter_mut().zip(raw).for_each(|(m, w)| *m += (w - *m) / t);
        }
        StepMetrics {
            sq_err_averaged: (y - y_hat_avg).powi(2),
            sq_err_baseline: (y - y_ls).powi(2),
            sq_err_raw: residual * residual,
        }
    }

    pub fn step(&mut self) -> StepMetrics {
        let x = self.draw_input();
        self.step_on(&x)
    }

    fn max_raw_norm(&self) -> f64 {
        self.raw.rows().map(norm).fold(0.0, f64::max)
    }
}

pub fn sgd_run(config: &SgdConfig) -> Result<SgdTrace> {
    let started = Instant::now();
    let mut runner = SgdRunner::new(config)?;
    let (baseline_a, baseline_b) = runner.baseline();
    let mut records = Vec::with_capacity(config.n_steps / config.window);
    let mut diverged = None;
    let mut first_raw_mse = None;
    let (mut num, mut den, mut raw) = (0.0, 0.0, 0.0);
    for j in 1..=config.n_steps {
        let m = runner.step();
        num += m.sq_err_averaged;
        den += m.sq_err_baseline;
        raw += m.sq_err_raw;
        if j % config.window != 0 {
            continue;
        }
        let raw_mse = raw / config.window as f64;
        records.push(WindowRecord {
            step_index: j,
            normalized_gen_error: if den > 0.0 { num / den } else { 0.0 },
            chamfer_weight_error: chamfer_error(&runner.teacher, &runner.averaged),
            raw_mse,
        });
        (num, den, raw) = (0.0, 0.0, 0.0);
        let first = *first_raw_mse.get_or_insert(raw_mse);
        let max_norm = runner.max_raw_norm();
        if !raw_mse.is_finite() || !max_norm.is_finite() {
            diverged = Some(format!("non-finite state at step {j}"));
        } else if raw_mse > config.divergence_factor * first.max(f64::MIN_POSITIVE) {
            diverged = Some(format!("raw MSE {raw_mse:e} at step {j} exceeds {:e} x the first window ({first:e})", config.divergence_factor));
        } else if max_norm > config.norm_guard {
            diverged = Some(format!("a student row reached norm {max_norm:e} at step {j} (guard {:e})", config.norm_guard));
        }
        if diverged.is_some() {
            break;
        }
    }
    Ok(SgdTrace {
        records,
        metadata: TraceMetadata {
            config: config.clone(),
            prng: PRNG_NAME.to_string(),
            baseline_a,
            baseline_b,
            initialization: format!("{:?}", config.init_kind),
            metric_timing: "averaged student scored on each sample before the update from that sample".into(),
            averaging: "running mean of all raw iterates from step 1".into(),
            window_statistic: "ratio of window sums (not mean of per-sample ratios)".into(),
        },
        diverged,
        student: Some(runner.averaged),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut out = vec![0.0; v.len()];
        let mut start = 0;
        while start < idx.len() {
            let mut end = start + 1;
            while end < idx.len() && v[idx[end]] == v[idx[start]] {
                end += 1;
            }
            let avg = (start + end - 1) as f64 / 2.0;
            for &i in &idx[start..end] {
                out[i] = avg;
            }
            start = end;
        }
        out
    }
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::Parse(format!("unknown scale '{other}' (expected desk or full)"))),
        }
    }
}

/// The run grid behind the learning-curve figure, with steps scaled by
/// `1/(R·d)`. Full scale is long-running.
pub fn figure1_configs(scale: Scale, seed: u64) -> Vec<SgdConfig> {
    let (widths, n_steps): (&[usize], usize) = match scale {
        Scale::Desk => (&[50, 350], DESK_STEPS),
        Scale::Full => (&[50, 350, 2500], FULL_STEPS),
    };
    let mut out = Vec::new();
    for &r in widths {
        for &s in &DESK_STEP_GRID {
            let mut cfg = SgdConfig::new(50, r, n_steps, s, seed);
            cfg.step_scaling = StepScaling::WidthDim;
            out.push(cfg);
        }
    }
    out
}

/// Runs the grid concurrently on the current rayon pool.
pub fn replicate_figure1(scale: Scale, seed: u64) -> Result<Vec<SgdTrace>> {
    figure1_configs(scale, seed).par_iter().map(sgd_run).collect()
}
