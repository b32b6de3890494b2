//! The JSON run configuration and its resolution against command-line flags.
//!
//! Precedence, highest first: command-line flags, the `--config` document,
//! the `TENSORNET_SEED` environment variable (seed only), built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tensornet::ensembles::EnsembleKind;
use tensornet::hermite::{ActivationKind, DEFAULT_TRUNCATION};
use tensornet::sgd::{Scale, SgdConfig};
use tensornet::tensors::ReductionMode;

use crate::CliError;

pub const SEED_ENV: &str = "TENSORNET_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Informational; written to manifests and ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hermite: Option<HermiteSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduce: Option<ReduceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd: Option<SgdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Flag, then config, then `TENSORNET_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }
}

fn default_tanh() -> ActivationKind {
    ActivationKind::ScaledTanh { beta: 2.5 }
}
fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HermiteSection {
    #[serde(default = "default_tanh")]
    pub activation: ActivationKind,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
}

impl Default for HermiteSection {
    fn default() -> Self {
        Self { activation: default_tanh(), truncation: DEFAULT_TRUNCATION }
    }
}

/// A generated ensemble. The seed is the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub d: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub kind: EnsembleKind,
    pub d: usize,
    pub r: usize,
    /// Also write the moment tensor of this order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_order: Option<usize>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { kind: EnsembleKind::Simplex, d: 8, r: 9, tensor_order: None }
    }
}

impl EnsembleSection {
    pub fn spec(&self) -> EnsembleSpec {
        EnsembleSpec { kind: self.kind, d: self.d, r: self.r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StudentSpec {
    /// Rows sampled with every teacher correlation at most `epsilon`.
    Constrained { r: usize, epsilon: f64 },
    /// A copy of the teacher.
    Teacher,
    /// Rows uniform on the sphere.
    Random { r: usize },
    /// Rows read from an ensemble CSV.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    pub teacher: EnsembleSpec,
    pub student: StudentSpec,
    #[serde(default = "default_tanh")]
    pub activation: ActivationKind,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    /// Correlation level for the certificate; defaults to the constrained
    /// student's `epsilon`, else the measured maximum correlation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Also write `bound_sweep.csv` over a grid of `epsilon` and `R`.
    #[serde(default)]
    pub sweep: bool,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self {
            teacher: EnsembleSpec { kind: EnsembleKind::Simplex, d: 10, r: 11 },
            student: StudentSpec::Constrained { r: 11, epsilon: 0.35 },
            activation: ActivationKind::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 1.0] },
            truncation: DEFAULT_TRUNCATION,
            epsilon: None,
            sweep: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModeName {
    Parity,
    TwoTensor,
    Noisy,
}

fn default_inputs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceSection {
    pub mode: ModeName,
    pub ell: usize,
    /// Monomial coefficients `a_0..a_D` (parity, two-tensor) or the positive
    /// `c_m..c_{⌊ℓ/(p−1)⌋}` (noisy).
    pub coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub teacher: EnsembleSpec,
    #[serde(default = "default_inputs")]
    pub n_inputs: usize,
    #[serde(default)]
    pub write_tensors: bool,
}

impl ReduceSection {
    pub fn reduction_mode(&self) -> Result<ReductionMode, CliError> {
        Ok(match self.mode {
            ModeName::Parity => ReductionMode::Parity,
            ModeName::TwoTensor => ReductionMode::TwoTensor,
            ModeName::Noisy => match (self.p, self.m) {
                (Some(p), Some(m)) => ReductionMode::Noisy { p, m },
                _ => return Err(CliError::Config("noisy mode needs both p and m".into())),
            },
        })
    }
}

impl Default for ReduceSection {
    fn default() -> Self {
        Self {
            mode: ModeName::Parity,
            ell: 3,
            coeffs: vec![0.0, 1.0, 0.0, 0.3],
            p: None,
            m: None,
            teacher: EnsembleSpec { kind: EnsembleKind::Simplex, d: 6, r: 7 },
            n_inputs: default_inputs(),
            write_tensors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    /// Run the learning-curve grid at this scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    /// A single run; used when `scale` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<SgdConfig>,
}

impl Default for SgdSection {
    fn default() -> Self {
        Self { scale: Some(Scale::Desk), run: None }
    }
}

fn default_mc_samples() -> usize {
    1_000_000
}
fn default_bound_configs() -> usize {
    50
}
fn default_corr_instances() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_bound_configs")]
    pub bound_configs: usize,
    #[serde(default = "default_corr_instances")]
    pub corr_instances: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { mc_samples: default_mc_samples(), bound_configs: default_bound_configs(), corr_instances: default_corr_instances() }
    }
}
