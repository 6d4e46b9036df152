use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Patch classification with probability fusion.
    Ppf,
    /// Whole-image classification with masked global average pooling.
    Image,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ppf => "ppf",
            Method::Image => "image",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "ppf" => Ok(Method::Ppf),
            "image" => Ok(Method::Image),
            other => Err(crate::Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Carcinoma probability for one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageProbability {
    pub p_carcinoma: f64,
    pub method: Method,
}

/// Result of classifying a frame. Frames without a single valid patch are
/// reported as non-diagnostic rather than being given a probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FrameVerdict {
    Scored(ImageProbability),
    NonDiagnostic,
}

impl FrameVerdict {
    pub fn probability(&self) -> Option<f64> {
        match self {
            FrameVerdict::Scored(p) => Some(p.p_carcinoma),
            FrameVerdict::NonDiagnostic => None,
        }
    }
}

/// Default decision threshold; scores equal to it count as carcinoma.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn predicts_carcinoma(p: f64, threshold: f64) -> bool {
    p >= threshold
}
