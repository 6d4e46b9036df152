use serde::{Deserialize, Serialize};

use super::mask::{inside, FovMask};
use crate::error::{Error, Result};

/// Top-left origins of square patches lying entirely inside the field of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// `(x, y)`, sorted row-major (by `y`, then `x`).
    pub origins: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// All stride-lattice origins whose four patch corners pass the mask predicate.
/// The circle is convex, so the whole rectangle is then inside.
pub fn extract_patch_grid(mask: &FovMask, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    let (w, h) = (mask.width(), mask.height());
    if patch_size == 0 || patch_size > w.min(h) {
        return Err(Error::Config(format!("patch size {patch_size} does not fit {w}x{h}")));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let r = mask.radius();
    let corner_inside = |x: usize, y: usize| {
        if r.is_nan() {
            mask.get(x, y)
        } else {
            inside(x as f64, y as f64, w, h, r)
        }
    };
    let last = patch_size - 1;
    let mut origins = Vec::new();
    for y in (0..=h - patch_size).step_by(stride) {
        for x in (0..=w - patch_size).step_by(stride) {
            if corner_inside(x, y)
                && corner_inside(x + last, y)
                && corner_inside(x, y + last)
                && corner_inside(x + last, y + last)
            {
                origins.push((x, y));
            }
        }
    }
    Ok(PatchGrid {
        patch_size,
        stride,
        origins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fov::compute_fov_mask;

    #[test]
    fn full_size_patch_in_inscribed_circle_is_empty() {
        let mask = compute_fov_mask(16, 16, 8.0).unwrap();
        assert!(extract_patch_grid(&mask, 16, 1).unwrap().is_empty());
    }

    #[test]
    fn covering_circle_reduces_to_tiling() {
        let mask = compute_fov_mask(8, 8, 10.0).unwrap();
        let grid = extract_patch_grid(&mask, 4, 4).unwrap();
        assert_eq!(grid.origins, vec![(0, 0), (4, 0), (0, 4), (4, 4)]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mask = compute_fov_mask(8, 8, 4.0).unwrap();
        assert!(extract_patch_grid(&mask, 9, 1).is_err());
        assert!(extract_patch_grid(&mask, 4, 0).is_err());
    }
}
