//! Patch probability fusion: classify rectangular patches from the round
//! field of view, assemble a probability map, fuse it to one probability.

mod net;
mod ppf;
mod train;

pub use net::{PatchModel, PatchNetTopology, PATCH_MODEL};
pub use ppf::{classify_patches, frame_grid, fuse, PatchProbability, ProbabilityMap};
pub use train::{augment_three_fold, rotate_quarter, train_ppf, training_patches, PpfConfig, PpfEpoch, PpfTrainLog};

use crate::data::Frame;
use crate::error::Result;
use crate::outcome::FrameVerdict;

/// Grid, classify and fuse one frame.
pub fn predict_frame(model: &PatchModel, frame: &Frame, stride: usize) -> Result<(ProbabilityMap, FrameVerdict)> {
    let grid = frame_grid(frame, model.topology.patch_size, stride)?;
    let map = classify_patches(model, frame, &grid)?;
    let verdict = fuse(&map);
    Ok((map, verdict))
}
