//! Circular extrapolation: linear-to-polar transform, concatenation with the
//! radially flipped copy, polar-to-linear transform, crop to the input square.

use std::f64::consts::TAU;

use super::mask::inside;
use super::resample::Plane;
use crate::data::Frame;
use crate::error::{Error, Result};

/// Sampling density of the polar representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarSampling {
    pub angular: usize,
    pub radial: usize,
}

impl PolarSampling {
    /// `ceil(2*pi*r)` angles and `ceil(r)` radii.
    pub fn for_radius(r: f64) -> PolarSampling {
        PolarSampling {
            angular: ((TAU * r).ceil() as usize).max(4),
            radial: (r.ceil() as usize).max(1),
        }
    }
}

/// Polar image: `angular` rows of `2 * radial` samples; the second half is the
/// first half reversed, so sample `radial + k` mirrors sample `radial - 1 - k`.
pub struct MirroredPolar {
    radius: f64,
    sampling: PolarSampling,
    center: (f64, f64),
    samples: Vec<f64>,
}

impl MirroredPolar {
    pub fn from_plane(src: &Plane, radius: f64, sampling: PolarSampling) -> MirroredPolar {
        MirroredPolar::from_plane_beyond(src, radius, sampling, 0.0)
    }

    /// Like [`MirroredPolar::from_plane`], but radial samples well below `inner`
    /// are left at zero; lookups there are then meaningless.
    pub fn from_plane_beyond(src: &Plane, radius: f64, sampling: PolarSampling, inner: f64) -> MirroredPolar {
        let PolarSampling { angular, radial } = sampling;
        let center = (src.width as f64 / 2.0, src.height as f64 / 2.0);
        let width = 2 * radial;
        let first = ((inner * radial as f64 / radius).floor() as usize).saturating_sub(2).min(radial);
        let mut samples = vec![0.0; angular * width];
        for a in 0..angular {
            let (s, c) = (TAU * a as f64 / angular as f64).sin_cos();
            let row = &mut samples[a * width..(a + 1) * width];
            let inside_fov = |x: usize, y: usize| inside(x as f64, y as f64, src.width, src.height, radius);
            // leading samples whose bilinear taps all lie inside the circle
            let mut clean = first;
            for k in first..radial {
                // radial sample centers at (k + 0.5) * r / R
                let rho = (k as f64 + 0.5) * radius / radial as f64;
                let (x, y) = (center.0 + rho * c, center.1 + rho * s);
                if clean == k && src.taps_all(x, y, inside_fov) {
                    clean += 1;
                }
                row[k] = src.bilinear(x, y);
            }
            // Outer samples would blend in the unlit surround; continue the
            // last two clean samples linearly instead.
            if clean >= first + 2 && clean < radial {
                let (a, b) = (row[clean - 2], row[clean - 1]);
                for k in clean..radial {
                    row[k] = b + (b - a) * (k + 1 - clean) as f64;
                }
            }
            for k in 0..radial {
                row[radial + k] = row[radial - 1 - k];
            }
        }
        MirroredPolar {
            radius,
            sampling,
            center,
            samples,
        }
    }

    /// Bilinear lookup at cartesian `(x, y)`; angles wrap, radii clamp.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let PolarSampling { angular, radial } = self.sampling;
        let width = 2 * radial;
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let rho = dx.hypot(dy);
        let theta = dy.atan2(dx).rem_euclid(TAU);
        let u = (rho * radial as f64 / self.radius - 0.5).clamp(0.0, (width - 1) as f64);
        let v = theta * angular as f64 / TAU;
        let u0 = u.floor() as usize;
        let u1 = (u0 + 1).min(width - 1);
        let fu = u - u0 as f64;
        let v0 = v.floor() as usize % angular;
        let v1 = (v0 + 1) % angular;
        let fv = v - v.floor();
        let at = |a: usize, k: usize| self.samples[a * width + k];
        let near = at(v0, u0) * (1.0 - fu) + at(v0, u1) * fu;
        let far = at(v1, u0) * (1.0 - fu) + at(v1, u1) * fu;
        near * (1.0 - fv) + far * fv
    }
}

/// Fills everything outside the circle of radius `r` about `(W/2, H/2)` with
/// the radial mirror of the interior; interior pixels are copied unchanged.
pub fn extrapolate_plane(src: &Plane, r: f64, sampling: PolarSampling) -> Result<Plane> {
    let half_min = src.width.min(src.height) as f64 / 2.0;
    if !(r > 0.0) || r > half_min {
        return Err(Error::Geometry(format!(
            "radius {r} does not fit a {}x{} frame",
            src.width, src.height
        )));
    }
    // exterior pixels only reach mirror radii above 2r minus the corner distance
    let (cx, cy) = (src.width as f64 / 2.0, src.height as f64 / 2.0);
    let corner = cx.max(src.width as f64 - 1.0 - cx).hypot(cy.max(src.height as f64 - 1.0 - cy));
    let polar = MirroredPolar::from_plane_beyond(src, r, sampling, 2.0 * r - corner);
    let mut out = src.clone();
    for y in 0..src.height {
        for x in 0..src.width {
            if !inside(x as f64, y as f64, src.width, src.height, r) {
                out.data[y * src.width + x] = polar.sample(x as f64, y as f64);
            }
        }
    }
    Ok(out)
}

/// Circular extrapolation of a raw frame at its own resolution.
pub fn circular_extrapolate(frame: &Frame, r: f64, sampling: Option<PolarSampling>) -> Result<Frame> {
    let sampling = sampling.unwrap_or_else(|| PolarSampling::for_radius(r));
    if (sampling.radial as f64) < r.floor() || sampling.angular < 4 {
        return Err(Error::Config(format!("polar sampling {sampling:?} too coarse for radius {r}")));
    }
    let src = Plane::from_u16(frame.width, frame.height, &frame.raw);
    let filled = extrapolate_plane(&src, r, sampling)?;
    let mut raw = filled.to_u16();
    // interior pixels are copied bit-exactly from the source
    for y in 0..frame.height {
        for x in 0..frame.width {
            if inside(x as f64, y as f64, frame.width, frame.height, r) {
                raw[y * frame.width + x] = frame.at(x, y);
            }
        }
    }
    Ok(frame.with_pixels(frame.width, frame.height, raw, frame.fov_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, Label, Site};

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> u16) -> Frame {
        let raw = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Frame {
            id: "f".into(),
            width: w,
            height: h,
            raw,
            fov_radius: (w.min(h) / 2) as f64,
            patient_id: "p".into(),
            sequence_id: "s".into(),
            label: Label::ClinicallyNormal,
            site: Site::Synthetic,
            domain: Domain::SyntheticA,
        }
    }

    #[test]
    fn constant_frames_stay_constant() {
        let f = frame(64, 64, |_, _| 1234);
        let out = circular_extrapolate(&f, 20.0, None).unwrap();
        assert!(out.raw.iter().all(|&v| v == 1234));
    }

    #[test]
    fn interior_is_untouched() {
        let f = frame(48, 40, |x, y| ((x * 7919 + y * 104729) % 65536) as u16);
        let r = 17.5;
        let out = circular_extrapolate(&f, r, None).unwrap();
        for y in 0..40 {
            for x in 0..48 {
                let d2 = (x as f64 - 24.0).powi(2) + (y as f64 - 20.0).powi(2);
                if d2 < (r - 1.0) * (r - 1.0) {
                    assert_eq!(out.at(x, y), f.at(x, y));
                }
            }
        }
    }

    #[test]
    fn dark_surround_does_not_bleed_into_the_mirror() {
        let (w, r) = (120, 50.0);
        let lit = frame(w, w, |_, _| 3000);
        let dark = frame(w, w, |x, y| if inside(x as f64, y as f64, w, w, r) { 3000 } else { 0 });
        let a = circular_extrapolate(&lit, r, None).unwrap();
        let b = circular_extrapolate(&dark, r, None).unwrap();
        assert_eq!(a.raw, b.raw);
    }

    #[test]
    fn ramp_mirrors_about_the_rim() {
        let (w, r) = (240, 100.0);
        let f = frame(w, w, |x, y| {
            let rho = (x as f64 - 120.0).hypot(y as f64 - 120.0);
            if rho <= r { rho.round() as u16 } else { 0 }
        });
        let out = circular_extrapolate(&f, r, None).unwrap();
        assert!((out.at(230, 120) as f64 - 90.0).abs() <= 1.0);
        assert!((out.at(120, 5) as f64 - 85.0).abs() <= 1.0);
    }

    #[test]
    fn oversized_radius_is_geometry_error() {
        let f = frame(32, 20, |_, _| 0);
        assert!(matches!(circular_extrapolate(&f, 10.5, None), Err(Error::Geometry(_))));
    }
}
