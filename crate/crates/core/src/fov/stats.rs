//! Median raw value per frame and per-site histograms of those medians.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mask::compute_fov_mask;
use super::resample::Plane;
use crate::data::{Frame, Site};
use crate::error::{Error, Result};

/// Median of `values`; the mean of the two central values for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Median raw value over pixels inside the frame's field of view.
pub fn median_raw_value(frame: &Frame) -> Result<f64> {
    let mask = compute_fov_mask(frame.width, frame.height, frame.fov_radius)?;
    let mut values: Vec<f64> = frame
        .raw
        .iter()
        .zip(mask.grid())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect();
    median(&mut values).ok_or_else(|| Error::Geometry(format!("frame {} has an empty field of view", frame.id)))
}

/// Mean and standard deviation of raw values inside the field of view.
pub fn fov_mean_std(frame: &Frame) -> Result<(f64, f64)> {
    let mask = compute_fov_mask(frame.width, frame.height, frame.fov_radius)?;
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for (&v, &m) in frame.raw.iter().zip(mask.grid()) {
        if m {
            let v = v as f64;
            n += 1;
            sum += v;
            sq += v * v;
        }
    }
    if n == 0 {
        return Err(Error::Geometry(format!("frame {} has an empty field of view", frame.id)));
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}

/// Frame as a plane standardized by its in-FOV mean and standard deviation.
pub fn standardized_plane(frame: &Frame) -> Result<Plane> {
    let (mean, std) = fov_mean_std(frame)?;
    let inv = 1.0 / std.max(1e-6);
    Ok(Plane::new(
        frame.width,
        frame.height,
        frame.raw.iter().map(|&v| (v as f64 - mean) * inv).collect(),
    ))
}

/// Logarithmically spaced bin edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogBins {
    pub edges: Vec<f64>,
}

impl LogBins {
    /// `bins` bins between `lo` and `hi` (both > 0).
    pub fn log_spaced(lo: f64, hi: f64, bins: usize) -> Result<LogBins> {
        if !(lo > 0.0 && hi > lo) || bins == 0 {
            return Err(Error::Config(format!("invalid log bins [{lo}, {hi}] x {bins}")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let edges = (0..=bins)
            .map(|k| (a + (b - a) * k as f64 / bins as f64).exp())
            .collect();
        Ok(LogBins { edges })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// `None` for underflow (including zero medians), `Some(bins)` for overflow.
    fn locate(&self, v: f64) -> Option<usize> {
        if !(v > 0.0) || v < self.edges[0] {
            return None;
        }
        Some(self.edges[1..].partition_point(|&e| e <= v).min(self.bins()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteHistogram {
    pub site: Site,
    pub frames: usize,
    /// Mass of zero or below-range medians.
    pub underflow: f64,
    pub bins: Vec<f64>,
    pub overflow: f64,
    pub medians: Vec<f64>,
}

impl SiteHistogram {
    pub fn total_mass(&self) -> f64 {
        self.underflow + self.bins.iter().sum::<f64>() + self.overflow
    }

    /// Shared mass `sum(min(a, b))` over all bins, underflow and overflow.
    pub fn overlap(&self, other: &SiteHistogram) -> f64 {
        self.underflow.min(other.underflow)
            + self.overflow.min(other.overflow)
            + self.bins.iter().zip(&other.bins).map(|(a, b)| a.min(*b)).sum::<f64>()
    }
}

/// Normalized per-site histograms of median raw values, sites in sorted order.
pub fn median_histogram(frames: &[Frame], bins: &LogBins) -> Result<Vec<SiteHistogram>> {
    if frames.is_empty() {
        log::warn!("median histogram requested for an empty frame set");
        return Ok(Vec::new());
    }
    let mut groups: BTreeMap<Site, Vec<f64>> = BTreeMap::new();
    for frame in frames {
        groups.entry(frame.site).or_default().push(median_raw_value(frame)?);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (site, medians) in groups {
        let n = medians.len() as f64;
        let mut hist = SiteHistogram {
            site,
            frames: medians.len(),
            underflow: 0.0,
            bins: vec![0.0; bins.bins()],
            overflow: 0.0,
            medians: Vec::new(),
        };
        let mut counts = vec![0usize; bins.bins() + 2];
        for &m in &medians {
            match bins.locate(m) {
                None => counts[0] += 1,
                Some(b) if b == bins.bins() => counts[bins.bins() + 1] += 1,
                Some(b) => counts[b + 1] += 1,
            }
        }
        hist.underflow = counts[0] as f64 / n;
        hist.overflow = counts[bins.bins() + 1] as f64 / n;
        for (b, c) in hist.bins.iter_mut().zip(&counts[1..=bins.bins()]) {
            *b = *c as f64 / n;
        }
        hist.medians = medians;
        out.push(hist);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, Label};

    fn frame(site: Site, w: usize, raw: Vec<u16>, r: f64) -> Frame {
        Frame {
            id: "f".into(),
            width: w,
            height: raw.len() / w,
            raw,
            fov_radius: r,
            patient_id: "p".into(),
            sequence_id: "s".into(),
            label: Label::ClinicallyNormal,
            site,
            domain: Domain::SyntheticA,
        }
    }

    #[test]
    fn constant_frame_median() {
        let f = frame(Site::Synthetic, 8, vec![500; 64], 3.0);
        assert_eq!(median_raw_value(&f).unwrap(), 500.0);
    }

    #[test]
    fn even_count_takes_central_mean() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        // 2x2 frame whose mask (r = 2) covers all four pixels
        let f = frame(Site::Synthetic, 2, vec![1, 2, 3, 4], 2.0);
        assert_eq!(median_raw_value(&f).unwrap(), 2.5);
    }

    #[test]
    fn sparse_bright_vessels_do_not_move_the_median() {
        let mut raw = vec![100u16; 100 * 100];
        for k in 0..100 {
            raw[50 * 100 + k] = 65535;
        }
        let f = frame(Site::Synthetic, 100, raw, 45.0);
        assert_eq!(median_raw_value(&f).unwrap(), 100.0);
    }

    #[test]
    fn out_of_fov_pixels_are_ignored() {
        let mut raw = vec![9000u16; 16 * 16];
        let mask = compute_fov_mask(16, 16, 5.0).unwrap();
        for (v, &m) in raw.iter_mut().zip(mask.grid()) {
            if m {
                *v = 7;
            }
        }
        assert_eq!(median_raw_value(&frame(Site::Synthetic, 16, raw, 5.0)).unwrap(), 7.0);
    }

    #[test]
    fn single_frame_fills_one_bin() {
        let bins = LogBins::log_spaced(1.0, 1e4, 12).unwrap();
        let h = median_histogram(&[frame(Site::VocalFold, 8, vec![300; 64], 3.0)], &bins).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].bins.iter().filter(|&&m| m == 1.0).count(), 1);
        assert_eq!(h[0].total_mass(), 1.0);
    }

    #[test]
    fn disjoint_sites_do_not_overlap_and_zero_underflows() {
        let bins = LogBins::log_spaced(1.0, 1e4, 20).unwrap();
        let frames = vec![
            frame(Site::HardPalate, 8, vec![40; 64], 3.0),
            frame(Site::HardPalate, 8, vec![0; 64], 3.0),
            frame(Site::VocalFold, 8, vec![2000; 64], 3.0),
        ];
        let h = median_histogram(&frames, &bins).unwrap();
        assert_eq!(h[0].site, Site::HardPalate);
        assert_eq!(h[0].underflow, 0.5);
        assert_eq!(h[0].overlap(&h[1]), 0.0);
        assert!(median_histogram(&[], &bins).unwrap().is_empty());
    }
}
