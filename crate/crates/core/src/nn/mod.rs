//! Minimal differentiable-network engine: layers, sequential networks,
//! cross-entropy, ADAM, finite-difference checks and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod layer;
mod loss;
mod network;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, Manifest, NetworkEntry, TensorEntry, FORMAT_VERSION};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, Objective, TensorCheck, MAX_CHECKED_PARAMS};
pub use layer::{softmax, Layer, LayerCache, LayerSpec};
pub(crate) use layer::mean_f64;
pub use loss::{cross_entropy, CrossEntropy, LOG_CLAMP};
pub use network::{Backward, Forward, Sequential};
