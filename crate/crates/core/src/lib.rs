//! Desk-scale salient-object-detection stack built around side-output
//! supervision: a deterministic differentiable tensor engine, the
//! neighbor-only (RDS) and dense (DSS) side-output topologies, the SGD
//! training loop, bounding-box objectness data preparation, the standard
//! saliency evaluation metrics, and dense-CRF refinement.

pub mod crf;
pub mod error;
pub mod formats;
pub mod graph;
pub mod metrics;
pub mod objectness;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tensor4};
