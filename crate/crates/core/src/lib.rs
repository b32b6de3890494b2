//! Numerical laboratory for two-layer networks `y(x) = Σ_i σ(⟨w_i, x⟩)` with
//! Gaussian inputs: Hermite expansions, exact population risk, lower-bound
//! certificates, moment-tensor reductions and a teacher–student SGD harness.

pub mod ensembles;
pub mod error;
pub mod hermite;
pub mod io;
pub mod linalg;
pub mod quadrature;
pub mod risk;
pub mod sgd;
pub mod tensors;

pub use error::{Error, Result};
