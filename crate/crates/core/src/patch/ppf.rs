//! Patch classification, probability maps and fusion to an image probability.

use std::fmt::Write as _;

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::PatchModel;
use crate::data::{frame_to_8bit, overlay, Frame};
use crate::error::{Error, Result};
use crate::fov::{compute_fov_mask, extract_patch_grid, standardized_plane, PatchGrid, Plane};
use crate::outcome::{FrameVerdict, ImageProbability, Method};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchProbability {
    pub origin: (usize, usize),
    pub p_carcinoma: f64,
}

/// Per-patch carcinoma probabilities in frame coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMap {
    pub frame_id: String,
    pub frame_size: (usize, usize),
    pub patch_size: usize,
    pub entries: Vec<PatchProbability>,
}

/// The patch grid of a frame at its own field-of-view radius.
pub fn frame_grid(frame: &Frame, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    let mask = compute_fov_mask(frame.width, frame.height, frame.fov_radius)?;
    extract_patch_grid(&mask, patch_size, stride)
}

pub(crate) fn patch_tensor(plane: &Plane, origin: (usize, usize), size: usize) -> Tensor<f32> {
    let data = plane.crop(origin.0, origin.1, size).into_iter().map(|v| v as f32).collect();
    Tensor::new(vec![1, size, size], data).expect("patch shape")
}

pub fn classify_patches(model: &PatchModel, frame: &Frame, grid: &PatchGrid) -> Result<ProbabilityMap> {
    if grid.patch_size != model.topology.patch_size {
        return Err(Error::Config(format!(
            "grid patch size {} does not match model input {}",
            grid.patch_size, model.topology.patch_size
        )));
    }
    let plane = standardized_plane(frame)?;
    let entries = grid
        .origins
        .par_iter()
        .map(|&origin| {
            let probs = model.net.infer(&patch_tensor(&plane, origin, grid.patch_size))?;
            Ok(PatchProbability {
                origin,
                p_carcinoma: probs.data()[1] as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbabilityMap {
        frame_id: frame.id.clone(),
        frame_size: (frame.width, frame.height),
        patch_size: grid.patch_size,
        entries,
    })
}

/// Mean of the patch carcinoma probabilities.
pub fn fuse(map: &ProbabilityMap) -> FrameVerdict {
    if map.entries.is_empty() {
        return FrameVerdict::NonDiagnostic;
    }
    let mean = map.entries.iter().map(|e| e.p_carcinoma).sum::<f64>() / map.entries.len() as f64;
    FrameVerdict::Scored(ImageProbability {
        p_carcinoma: mean,
        method: Method::Ppf,
    })
}

impl ProbabilityMap {
    /// `x<TAB>y<TAB>p` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("origin_x\torigin_y\tp_carcinoma\n");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{:.9}", e.origin.0, e.origin.1, e.p_carcinoma);
        }
        out
    }

    /// Per-pixel mean probability of the patches covering it (NaN where none do).
    pub fn pixel_probabilities(&self) -> Vec<f64> {
        let (w, h) = self.frame_size;
        let mut sum = vec![0.0; w * h];
        let mut count = vec![0u32; w * h];
        for e in &self.entries {
            for y in e.origin.1..e.origin.1 + self.patch_size {
                for x in e.origin.0..e.origin.0 + self.patch_size {
                    sum[y * w + x] += e.p_carcinoma;
                    count[y * w + x] += 1;
                }
            }
        }
        sum.iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect()
    }

    /// 8-bit heatmap blended at `alpha` over the min–max compressed frame.
    pub fn overlay(&self, frame: &Frame, alpha: f64) -> Result<GrayImage> {
        let base = frame_to_8bit(frame)?;
        let (w, h) = self.frame_size;
        let probs: Vec<f64> = self.pixel_probabilities().into_iter().map(|p| if p.is_nan() { 0.0 } else { p }).collect();
        let heat = crate::data::heatmap(&probs, w, h, w, h);
        Ok(overlay(&base, &heat, alpha))
    }
}
