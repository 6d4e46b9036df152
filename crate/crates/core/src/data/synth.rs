//! Seeded generator of two-domain, two-class CLE-like frames.
//!
//! Clinically normal tissue is a jittered polygonal cell lattice with bright
//! borders; carcinoma is multi-octave value noise with bright vessel streaks.
//! Low-median sites render the lattice faintly over fine grain and carry
//! higher relative shot noise. Every frame draws from its own RNG stream keyed
//! by (seed, domain, patient, frame), so output bytes do not depend on
//! scheduling.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frame::{Domain, Frame, Label, Site};
use super::manifest::{DatasetManifest, ManifestRecord};
use super::pgm::encode_pgm;
use crate::error::{Error, Result};
use crate::fov::{compute_fov_mask, median};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub site: Site,
    /// Target median raw value (scanner units).
    pub median: f64,
    /// Log-normal spread of per-frame medians.
    pub median_log_sd: f64,
    /// 1 renders a crisp lattice; lower values fade it into granular noise.
    pub clarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain: Domain,
    pub patients: usize,
    pub frames_per_patient: usize,
    /// Cell spacing of the normal lattice, pixels.
    pub lattice_spacing: f64,
    /// Seed jitter as a fraction of the spacing.
    pub lattice_jitter: f64,
    /// Frames cycle through these sites.
    pub sites: Vec<SiteSpec>,
    /// Index of one patient that only has clinically normal frames.
    pub normal_only_patient: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarcinomaTexture {
    /// Base blob scale relative to the lattice spacing.
    pub blob_scale: f64,
    pub octaves: usize,
    pub vessels: (usize, usize),
    pub vessel_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub frame_size: usize,
    pub fov_radius: f64,
    pub background: u16,
    /// Variance of shot noise per unit signal.
    pub shot_gain: f64,
    pub read_noise: f64,
    pub carcinoma: CarcinomaTexture,
    pub domains: Vec<DomainSpec>,
}

impl Default for SynthSpec {
    /// Desk-scale dataset: an oral-cavity-like domain with high- and low-median
    /// sites, and a vocal-fold-like domain with a finer lattice and only
    /// high-median frames.
    fn default() -> Self {
        let site = |site, median, clarity| SiteSpec {
            site,
            median,
            median_log_sd: 0.2,
            clarity,
        };
        SynthSpec {
            seed: 2018,
            frame_size: 272,
            fov_radius: 128.0,
            background: 0,
            shot_gain: 1.0,
            read_noise: 2.0,
            carcinoma: CarcinomaTexture {
                blob_scale: 2.0,
                octaves: 3,
                vessels: (1, 3),
                vessel_gain: 5.0,
            },
            domains: vec![
                DomainSpec {
                    domain: Domain::SyntheticA,
                    patients: 6,
                    frames_per_patient: 10,
                    lattice_spacing: 12.0,
                    lattice_jitter: 0.35,
                    sites: vec![
                        site(Site::AlveolarRidge, 1500.0, 1.0),
                        site(Site::HardPalate, 150.0, 0.12),
                        site(Site::InnerLabium, 200.0, 0.12),
                    ],
                    normal_only_patient: None,
                },
                DomainSpec {
                    domain: Domain::SyntheticB,
                    patients: 6,
                    frames_per_patient: 10,
                    lattice_spacing: 9.0,
                    lattice_jitter: 0.35,
                    sites: vec![site(Site::VocalFold, 2500.0, 1.0)],
                    normal_only_patient: Some(4),
                },
            ],
        }
    }
}

/// Spatial arrangement of tissue classes within one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layout {
    Uniform(Label),
    /// `left` for `x < W/2`, `right` otherwise.
    Split { left: Label, right: Label },
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || self.frame_size > super::pgm::MAX_DIMENSION {
            return Err(Error::Config(format!("frame size {}", self.frame_size)));
        }
        if !(self.fov_radius > 0.0) || self.fov_radius > self.frame_size as f64 / 2.0 {
            return Err(Error::Config(format!("fov radius {} does not fit", self.fov_radius)));
        }
        if self.domains.is_empty() {
            return Err(Error::Config("no domains".into()));
        }
        for d in &self.domains {
            if d.frames_per_patient == 0 {
                return Err(Error::Config(format!("{}: zero frames per patient", d.domain)));
            }
            if d.patients < 3 {
                return Err(Error::Config(format!("{}: at least 3 patients are needed", d.domain)));
            }
            if d.sites.is_empty() || !(d.lattice_spacing > 2.0) {
                return Err(Error::Config(format!("{}: invalid texture parameters", d.domain)));
            }
            if d.normal_only_patient.is_some_and(|p| p >= d.patients) {
                return Err(Error::Config(format!("{}: normal-only patient out of range", d.domain)));
            }
        }
        Ok(())
    }

    pub fn domain(&self, domain: Domain) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.domain == domain)
    }
}

pub fn patient_id(domain: Domain, patient: usize) -> String {
    let tag = match domain {
        Domain::SyntheticA | Domain::Oc => "A",
        Domain::SyntheticB | Domain::Vc => "B",
    };
    format!("{tag}-p{patient:02}")
}

struct Job {
    domain_index: usize,
    patient: usize,
    frame: usize,
    label: Label,
    site: usize,
}

fn jobs(spec: &SynthSpec) -> Vec<Job> {
    let mut out = Vec::new();
    for (di, d) in spec.domains.iter().enumerate() {
        for p in 0..d.patients {
            for f in 0..d.frames_per_patient {
                let label = if d.normal_only_patient == Some(p) || f % 2 == 0 {
                    Label::ClinicallyNormal
                } else {
                    Label::Carcinoma
                };
                out.push(Job {
                    domain_index: di,
                    patient: p,
                    frame: f,
                    label,
                    site: f % d.sites.len(),
                });
            }
        }
    }
    out
}

/// Renders the full dataset in memory.
pub fn render_dataset(spec: &SynthSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    jobs(spec)
        .par_iter()
        .map(|job| {
            let d = &spec.domains[job.domain_index];
            let site = &d.sites[job.site];
            let pid = patient_id(d.domain, job.patient);
            let stream = seed::derive(spec.seed, &[seed::key(d.domain.as_str()), job.patient as u64, job.frame as u64]);
            let raw = render_frame(spec, d, site, Layout::Uniform(job.label), stream);
            Ok(Frame {
                id: format!("{}/{}/f{:03}.pgm", d.domain, pid, job.frame),
                width: spec.frame_size,
                height: spec.frame_size,
                raw,
                fov_radius: spec.fov_radius,
                sequence_id: format!("{pid}-{}", site.site),
                patient_id: pid,
                label: job.label,
                site: site.site,
                domain: d.domain,
            })
        })
        .collect()
}

/// Writes frames and `manifest.tsv` under `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let frames = render_dataset(spec)?;
    for frame in &frames {
        let path = out_dir.join(&frame.id);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = encode_pgm(frame.width, frame.height, &frame.raw)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records: frames
            .iter()
            .map(|f| ManifestRecord {
                path: f.id.clone(),
                patient_id: f.patient_id.clone(),
                sequence_id: f.sequence_id.clone(),
                label: f.label,
                site: f.site,
                domain: f.domain,
                fov_radius: f.fov_radius,
            })
            .collect(),
    };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Uniform in [0, 1) from a hashed lattice coordinate.
fn hash01(stream: u64, a: i64, b: i64, c: u64) -> f64 {
    (seed::derive(stream, &[a as u64, b as u64, c]) >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(stream: u64, octave: u64, x: f64, y: f64, scale: f64) -> f64 {
    let (u, v) = (x / scale, y / scale);
    let (x0, y0) = (u.floor(), v.floor());
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (fx, fy) = (smooth(u - x0), smooth(v - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let g = |dx: i64, dy: i64| hash01(stream, ix + dx, iy + dy, octave);
    let top = g(0, 0) * (1.0 - fx) + g(1, 0) * fx;
    let bottom = g(0, 1) * (1.0 - fx) + g(1, 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn lattice(stream: u64, x: f64, y: f64, spacing: f64, jitter: f64) -> f64 {
    let (cx, cy) = ((x / spacing).floor() as i64, (y / spacing).floor() as i64);
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    let mut nearest = (0, 0);
    for gy in cy - 2..=cy + 2 {
        for gx in cx - 2..=cx + 2 {
            let sx = (gx as f64 + 0.5 + jitter * (hash01(stream, gx, gy, 100) - 0.5) * 2.0) * spacing;
            let sy = (gy as f64 + 0.5 + jitter * (hash01(stream, gx, gy, 101) - 0.5) * 2.0) * spacing;
            let d = (x - sx).hypot(y - sy);
            if d < d1 {
                d2 = d1;
                d1 = d;
                nearest = (gx, gy);
            } else if d < d2 {
                d2 = d;
            }
        }
    }
    let width = 0.15 * spacing;
    let border = (-((d2 - d1) / width).powi(2)).exp();
    let cell = 0.85 + 0.3 * hash01(stream, nearest.0, nearest.1, 102);
    cell * (0.35 + border)
}

/// Faint sites blend the lattice with disordered haze that resembles
/// dysplastic tissue once contrast is normalized away.
fn normal_texture(stream: u64, x: f64, y: f64, d: &DomainSpec, c: &CarcinomaTexture, clarity: f64) -> f64 {
    let crisp = lattice(stream, x, y, d.lattice_spacing, d.lattice_jitter);
    if clarity >= 1.0 {
        return crisp;
    }
    let haze = carcinoma_texture(seed::mix(stream ^ 0x4841_5a45), x, y, d, c, &[]);
    clarity * crisp + (1.0 - clarity) * haze
}

struct Vessel {
    px: f64,
    py: f64,
    nx: f64,
    ny: f64,
    width: f64,
}

fn carcinoma_texture(stream: u64, x: f64, y: f64, d: &DomainSpec, c: &CarcinomaTexture, vessels: &[Vessel]) -> f64 {
    let mut v = 0.0;
    let mut weight = 0.5;
    let mut total = 0.0;
    let mut scale = c.blob_scale * d.lattice_spacing;
    for o in 0..c.octaves {
        v += weight * value_noise(stream, o as u64, x, y, scale);
        total += weight;
        weight *= 0.6;
        scale /= 2.0;
    }
    let v = v / total;
    let mut t = 0.15 + 1.6 * v.powf(1.5);
    for ves in vessels {
        let dist = (x - ves.px) * ves.nx + (y - ves.py) * ves.ny;
        t += c.vessel_gain * (-(dist / ves.width).powi(2)).exp();
    }
    t
}

/// Renders one frame's raw samples.
pub fn render_frame(spec: &SynthSpec, d: &DomainSpec, site: &SiteSpec, layout: Layout, stream: u64) -> Vec<u16> {
    let n = spec.frame_size;
    let mask = compute_fov_mask(n, n, spec.fov_radius).expect("validated geometry");
    let mut rng = seed::rng(stream, &[0]);
    let center = n as f64 / 2.0;
    let vessel_count = rng.gen_range(spec.carcinoma.vessels.0..=spec.carcinoma.vessels.1);
    let vessels: Vec<Vessel> = (0..vessel_count)
        .map(|_| {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let offset = rng.gen_range(-0.6..0.6) * spec.fov_radius;
            Vessel {
                px: center + offset * angle.cos(),
                py: center + offset * angle.sin(),
                nx: angle.cos(),
                ny: angle.sin(),
                width: rng.gen_range(1.2..2.5),
            }
        })
        .collect();
    let target = site.median * (site.median_log_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp();
    let label_at = |x: usize| match layout {
        Layout::Uniform(l) => l,
        Layout::Split { left, right } => {
            if (x as f64) < center {
                left
            } else {
                right
            }
        }
    };
    let mut texture = vec![0.0f64; n * n];
    for y in 0..n {
        for x in 0..n {
            if !mask.get(x, y) {
                continue;
            }
            let (fx, fy) = (x as f64, y as f64);
            texture[y * n + x] = match label_at(x) {
                Label::ClinicallyNormal => normal_texture(stream, fx, fy, d, &spec.carcinoma, site.clarity),
                Label::Carcinoma => carcinoma_texture(stream, fx, fy, d, &spec.carcinoma, &vessels),
            };
        }
    }
    let mut inside: Vec<f64> = texture
        .iter()
        .zip(mask.grid())
        .filter(|(_, &m)| m)
        .map(|(&t, _)| t)
        .collect();
    let scale = target / median(&mut inside).unwrap_or(1.0).max(1e-9);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    texture
        .iter()
        .zip(mask.grid())
        .map(|(&t, &m)| {
            if !m {
                return spec.background;
            }
            let signal = t * scale;
            let sd = (spec.shot_gain * signal + spec.read_noise * spec.read_noise).sqrt();
            let v: f64 = signal + sd * std_normal.sample(&mut rng);
            v.round().clamp(0.0, 65535.0) as u16
        })
        .collect()
}
