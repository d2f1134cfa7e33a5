//! The first two steps of the detailed security analysis: fitting the
//! per-detector efficiencies from combined run data, and reconstructing the
//! joint density matrix by iterative maximum likelihood in the vacuum +
//! single-photon subspaces.

mod fit;
mod mle;

pub use fit::{fit_efficiencies, werner_outcome_prob, FitOptions, FitResult};
pub use mle::{
    frequencies_from_counts, joint_effects, mle_from_frequencies, mle_reconstruct, MleOptions,
    MleSolution, TomographyResult,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("unidentifiable input: {0}")]
    Identifiability(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Detection(#[from] crate::detection::DetectionError),
    #[error(transparent)]
    Qmath(#[from] crate::qmath::QmathError),
}
