//! Frames, the 16-bit PGM codec, dataset manifests and the synthetic generator.

mod export;
mod frame;
mod manifest;
mod pgm;
mod synth;

pub use export::{frame_to_8bit, heatmap, overlay, save_png};
pub use frame::{Domain, Frame, Label, Site};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestRecord, MANIFEST_VERSION};
pub use pgm::{decode_pgm, encode_pgm, DecodedPgm, MAX_DIMENSION};
pub use synth::{
    generate_synthetic, patient_id, render_dataset, render_frame, CarcinomaTexture, DomainSpec, Layout, SiteSpec,
    SynthSpec,
};
