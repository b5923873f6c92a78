//! Gradient oracles and data.

mod analytic;
mod data;
mod idx;
mod mlp;

use thiserror::Error;

pub use analytic::{QuadraticObjective, Rosenbrock};
pub use data::{make_blobs, make_two_moons, minibatches, Batch, Dataset, Labels, Split};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IdxError, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use mlp::{Activation, ForwardCache, Loss, Mlp, MlpObjective, MlpSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch index {index} out of range for {len} samples")]
    BatchIndex { index: usize, len: usize },
    #[error(transparent)]
    Idx(#[from] IdxError),
}

/// A value/gradient oracle over a flat parameter vector.
///
/// `batch` selects sample indices for data-backed objectives; `None` means
/// the full dataset. Analytic objectives ignore it.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value_and_grad(
        &self,
        theta: &[f64],
        batch: Option<&[usize]>,
    ) -> Result<(f64, Vec<f64>), ModelError>;

    fn value(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<f64, ModelError> {
        Ok(self.value_and_grad(theta, batch)?.0)
    }

    fn grad(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<Vec<f64>, ModelError> {
        Ok(self.value_and_grad(theta, batch)?.1)
    }

    /// Exact Hessian, where one is available in closed form.
    fn hessian(&self, _theta: &[f64]) -> Option<Vec<Vec<f64>>> {
        None
    }

    /// Classification accuracy, for objectives that have labels.
    fn accuracy(&self, _theta: &[f64], _batch: Option<&[usize]>) -> Option<f64> {
        None
    }

    /// Number of samples for data-backed objectives.
    fn num_samples(&self) -> Option<usize> {
        None
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::ShapeMismatch { expected, found });
    }
    Ok(())
}
