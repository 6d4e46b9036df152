//! Whole-image preprocessing: optional rotation, circular extrapolation,
//! resize to the stem input, z-scoring over the field of view.

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::fov::{compute_fov_mask, extrapolate_plane, inside, Plane, PolarSampling};
use crate::tensor::Tensor;

/// Variance below which the region outside the circle counts as flat.
pub const FLAT_CORNER_VARIANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedImage {
    /// `[1, S, S]`, z-scored.
    pub tensor: Tensor<f32>,
    /// FOV radius in input pixels.
    pub fov_radius: f64,
}

pub fn preprocess_image(frame: &Frame, input_size: usize, rotation: Option<f64>) -> Result<PreprocessedImage> {
    if frame.width != frame.height {
        return Err(Error::Geometry(format!(
            "frame {} is {}×{}; whole-image input must be square",
            frame.id, frame.width, frame.height
        )));
    }
    let mut plane = Plane::from_u16(frame.width, frame.height, &frame.raw);
    let r = frame.fov_radius;
    if let Some(angle) = rotation {
        // everything outside the circle is replaced by the extrapolation
        let (w, h) = (frame.width, frame.height);
        plane = plane.rotate_where(angle, |x, y| inside(x as f64, y as f64, w, h, r));
    }
    let plane = extrapolate_plane(&plane, r, PolarSampling::for_radius(r))?.resize(input_size, input_size);
    let r_in = r * input_size as f64 / frame.width as f64;
    let tensor = standardize_inside(&plane, r_in)?;
    Ok(PreprocessedImage { tensor, fov_radius: r_in })
}

/// Z-scores a plane by the mean and deviation of its in-FOV pixels.
pub fn standardize_inside(plane: &Plane, r: f64) -> Result<Tensor<f32>> {
    let mask = compute_fov_mask(plane.width, plane.height, r)?;
    let inside: Vec<f64> = plane.data.iter().zip(mask.grid()).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if inside.is_empty() {
        return Err(Error::Geometry("empty field of view".into()));
    }
    let n = inside.len() as f64;
    let mean = inside.iter().sum::<f64>() / n;
    let var = inside.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / var.sqrt().max(1e-6);
    Tensor::new(
        vec![1, plane.height, plane.width],
        plane.data.iter().map(|&v| ((v - mean) * inv) as f32).collect(),
    )
}

/// True when the pixels outside the circle are (near) constant, as in a
/// frame that skipped circular extrapolation.
pub fn corners_look_flat(input: &Tensor<f32>, r: f64) -> bool {
    let [_, h, w] = input.shape()[..] else { return false };
    let outside: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !inside(x as f64, y as f64, w, h, r))
        .map(|(x, y)| input.data()[y * w + x] as f64)
        .collect();
    if outside.len() < 2 {
        return false;
    }
    let n = outside.len() as f64;
    let mean = outside.iter().sum::<f64>() / n;
    outside.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n < FLAT_CORNER_VARIANCE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, Label, Site};

    fn textured(n: usize, r: f64) -> Frame {
        let raw = (0..n * n)
            .map(|k| {
                let (x, y) = ((k % n) as f64, (k / n) as f64);
                if inside(x, y, n, n, r) {
                    (1000.0 + 300.0 * (x * 0.7).sin() * (y * 0.4).cos()) as u16
                } else {
                    0
                }
            })
            .collect();
        Frame {
            id: "t".into(),
            width: n,
            height: n,
            raw,
            fov_radius: r,
            patient_id: "p".into(),
            sequence_id: "s".into(),
            label: Label::Carcinoma,
            site: Site::Synthetic,
            domain: Domain::SyntheticA,
        }
    }

    #[test]
    fn output_is_standardized_inside_and_textured_outside() {
        let f = textured(64, 30.0);
        let p = preprocess_image(&f, 32, None).unwrap();
        assert_eq!(p.tensor.shape(), &[1, 32, 32]);
        assert_eq!(p.fov_radius, 15.0);
        let mask = compute_fov_mask(32, 32, 15.0).unwrap();
        let vals: Vec<f64> = p.tensor.data().iter().zip(mask.grid()).filter(|(_, &m)| m).map(|(&v, _)| v as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
        assert!(!corners_look_flat(&p.tensor, p.fov_radius));
    }

    #[test]
    fn unextrapolated_input_is_flagged() {
        let f = textured(32, 15.0);
        let plane = Plane::from_u16(32, 32, &f.raw);
        let t = standardize_inside(&plane, 15.0).unwrap();
        assert!(corners_look_flat(&t, 15.0));
    }

    #[test]
    fn non_square_frames_are_rejected() {
        let mut f = textured(16, 7.0);
        f.width = 32;
        f.height = 8;
        assert!(matches!(preprocess_image(&f, 16, None), Err(Error::Geometry(_))));
    }
}
