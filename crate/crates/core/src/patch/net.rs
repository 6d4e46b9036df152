use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, LayerSpec, Sequential};
use crate::tensor::{window_output, Scalar};

/// conv → pool → conv → pool → FC → FC → softmax(2) with configurable widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchNetTopology {
    pub patch_size: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for PatchNetTopology {
    fn default() -> Self {
        PatchNetTopology {
            patch_size: 32,
            conv1: 16,
            conv2: 32,
            hidden: 128,
            kernel: 3,
        }
    }
}

impl PatchNetTopology {
    /// Same layer structure with widths divided by `factor` (at least 1 each).
    pub fn narrowed(self, factor: usize) -> Self {
        PatchNetTopology {
            conv1: (self.conv1 / factor).max(1),
            conv2: (self.conv2 / factor).max(1),
            hidden: (self.hidden / factor).max(1),
            ..self
        }
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let k = self.kernel;
        let side = window_output(self.patch_size, k, 1, 0)
            .and_then(|s| window_output(s, 2, 2, 0))
            .and_then(|s| window_output(s, k, 1, 0))
            .and_then(|s| window_output(s, 2, 2, 0))
            .ok_or_else(|| Error::Config(format!("patch size {} too small for {self:?}", self.patch_size)))?;
        Ok(vec![
            LayerSpec::conv(1, self.conv1, k, 1, 0),
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 2, stride: 2 },
            LayerSpec::conv(self.conv1, self.conv2, k, 1, 0),
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 2, stride: 2 },
            LayerSpec::fc(self.conv2 * side * side, self.hidden),
            LayerSpec::Relu,
            LayerSpec::fc(self.hidden, 2),
            LayerSpec::Softmax,
        ])
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.patch_size, self.patch_size]
    }

    pub fn build<T: Scalar>(&self, rng: &mut impl Rng) -> Result<Sequential<T>> {
        Sequential::build(&self.input_shape(), &self.layers()?, rng)
    }
}

/// A trained patch classifier.
#[derive(Clone, Debug)]
pub struct PatchModel {
    pub topology: PatchNetTopology,
    pub net: Sequential<f32>,
}

pub const PATCH_MODEL: &str = "patch-net";

impl PatchModel {
    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(PATCH_MODEL, seed, step);
        ck.add_network("patch", self.net.input_shape(), self.net.specs());
        for (name, p) in self.net.param_names().into_iter().zip(self.net.params()) {
            ck.push_tensor(format!("patch.{name}"), p.clone());
        }
        ck.manifest
            .metadata
            .insert("topology".into(), serde_json::to_string(&self.topology).unwrap_or_default());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<PatchModel> {
        if ck.manifest.model != PATCH_MODEL {
            return Err(Error::Decode(format!("expected {PATCH_MODEL}, found {}", ck.manifest.model)));
        }
        let topology: PatchNetTopology = serde_json::from_str(
            ck.manifest
                .metadata
                .get("topology")
                .ok_or_else(|| Error::Decode("missing topology".into()))?,
        )?;
        let entry = ck.network("patch")?;
        let mut net = Sequential::zeroed(&entry.input_shape, &entry.layers)?;
        let names = net.param_names();
        for (name, p) in names.iter().zip(net.params_mut()) {
            let t = ck.tensor(&format!("patch.{name}"))?;
            t.expect_shape(p.shape())?;
            *p = t.clone();
        }
        Ok(PatchModel { topology, net })
    }
}
