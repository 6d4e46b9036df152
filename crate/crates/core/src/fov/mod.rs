//! Circular field-of-view geometry: validity masks, circular extrapolation,
//! patch grids and median-intensity statistics.

mod extrapolate;
mod grid;
mod mask;
mod resample;
mod stats;

pub use extrapolate::{circular_extrapolate, extrapolate_plane, MirroredPolar, PolarSampling};
pub use grid::{extract_patch_grid, PatchGrid};
pub use mask::{compute_fov_mask, inside, FovMask};
pub use resample::Plane;
pub use stats::{fov_mean_std, median, median_histogram, median_raw_value, standardized_plane, LogBins, SiteHistogram};

/// Default field-of-view radius for 576×576 scanner frames.
pub const SCANNER_FOV_RADIUS: f64 = 270.0;
pub const SCANNER_FRAME_SIZE: usize = 576;
