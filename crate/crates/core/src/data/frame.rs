use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    ClinicallyNormal,
    Carcinoma,
}

impl Label {
    /// Class index used by the networks: carcinoma is the positive class 1.
    pub fn index(self) -> usize {
        match self {
            Label::ClinicallyNormal => 0,
            Label::Carcinoma => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            Label::Carcinoma
        } else {
            Label::ClinicallyNormal
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Carcinoma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Site {
    AlveolarRidge,
    HardPalate,
    InnerLabium,
    VocalFold,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "OC")]
    Oc,
    #[serde(rename = "VC")]
    Vc,
    #[serde(rename = "synthetic-A")]
    SyntheticA,
    #[serde(rename = "synthetic-B")]
    SyntheticB,
}

macro_rules! text_enum {
    ($t:ty { $($v:ident => $s:literal),* $(,)? }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(<$t>::$v => $s),* }
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$t>::$v),)*
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($t), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(Label { ClinicallyNormal => "clinically-normal", Carcinoma => "carcinoma" });
text_enum!(Site {
    AlveolarRidge => "alveolar-ridge",
    HardPalate => "hard-palate",
    InnerLabium => "inner-labium",
    VocalFold => "vocal-fold",
    Synthetic => "synthetic",
});
text_enum!(Domain { Oc => "OC", Vc => "VC", SyntheticA => "synthetic-A", SyntheticB => "synthetic-B" });

/// One raw grayscale frame with a circular field of view.
///
/// `raw` is row-major, `width * height` samples in scanner units. Only pixels
/// inside the field of view carry signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub raw: Vec<u16>,
    pub fov_radius: f64,
    pub patient_id: String,
    pub sequence_id: String,
    pub label: Label,
    pub site: Site,
    pub domain: Domain,
}

impl Frame {
    pub fn at(&self, x: usize, y: usize) -> u16 {
        self.raw[y * self.width + x]
    }

    /// Same metadata, new pixels (dimensions may change).
    pub fn with_pixels(&self, width: usize, height: usize, raw: Vec<u16>, fov_radius: f64) -> Frame {
        debug_assert_eq!(raw.len(), width * height);
        Frame {
            width,
            height,
            raw,
            fov_radius,
            ..self.clone()
        }
    }
}
