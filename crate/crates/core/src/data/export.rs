//! 8-bit visualization exports.

use std::path::Path;

use image::{GrayImage, Luma};

use super::frame::Frame;
use crate::error::Result;
use crate::fov::compute_fov_mask;

/// Min–max compresses in-FOV raw values into 0..=255; outside pixels are 0.
pub fn frame_to_8bit(frame: &Frame) -> Result<GrayImage> {
    let mask = compute_fov_mask(frame.width, frame.height, frame.fov_radius)?;
    let (lo, hi) = frame
        .raw
        .iter()
        .zip(mask.grid())
        .filter(|(_, &m)| m)
        .fold((u16::MAX, 0u16), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let span = (hi.saturating_sub(lo)).max(1) as f64;
    let mut img = GrayImage::new(frame.width as u32, frame.height as u32);
    for (k, (&v, &m)) in frame.raw.iter().zip(mask.grid()).enumerate() {
        let g = if m {
            (((v.saturating_sub(lo)) as f64 / span) * 255.0).round() as u8
        } else {
            0
        };
        img.put_pixel((k % frame.width) as u32, (k / frame.width) as u32, Luma([g]));
    }
    Ok(img)
}

/// Maps values in [0, 1] to gray levels, nearest-neighbor upsampled by `factor`
/// along each axis from a `width`×`height` grid to `out_w`×`out_h`.
pub fn heatmap(values: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> GrayImage {
    let mut img = GrayImage::new(out_w as u32, out_h as u32);
    for y in 0..out_h {
        let sy = (y * height / out_h).min(height - 1);
        for x in 0..out_w {
            let sx = (x * width / out_w).min(width - 1);
            let v = values[sy * width + sx].clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, Luma([(v * 255.0).round() as u8]));
        }
    }
    img
}

/// Blends a heatmap over a grayscale base with the given alpha.
pub fn overlay(base: &GrayImage, heat: &GrayImage, alpha: f64) -> GrayImage {
    let mut out = base.clone();
    for (o, h) in out.pixels_mut().zip(heat.pixels()) {
        o.0[0] = ((1.0 - alpha) * o.0[0] as f64 + alpha * h.0[0] as f64).round() as u8;
    }
    out
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path)?;
    Ok(())
}
