//! The dual-path classifier: patch embedding along time and frequency,
//! a stack of selective state-space blocks per path, fusion of the two
//! path summaries, and an angular-margin classification head.

pub mod head;
pub mod model;
pub mod patch;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{Discretization, SsmConfig};

pub use head::{anomaly_score, log_softmax};
pub use model::{ClipInput, EstmModel, Forward};
pub use patch::{Axis, PatchGrid, Split};

/// Which scanning paths feed the fused feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paths {
    /// Frequency path only.
    S,
    /// Time path only.
    T,
    St,
}

impl Paths {
    pub fn uses_freq(self) -> bool {
        matches!(self, Paths::S | Paths::St)
    }

    pub fn uses_time(self) -> bool {
        matches!(self, Paths::T | Paths::St)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Paths::S => "s",
            Paths::T => "t",
            Paths::St => "st",
        }
    }
}

impl std::str::FromStr for Paths {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(Paths::S),
            "t" => Ok(Paths::T),
            "st" => Ok(Paths::St),
            other => Err(Error::Config(format!("paths must be s, t or st, got {other:?}"))),
        }
    }
}

/// Token whose final hidden state summarizes a path. The class token is
/// always placed first; `Last` reads the final scan position, which is the
/// only one that has seen every patch under a causal scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Last,
    First,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_kernel: usize,
    /// Blocks per path.
    pub depth: usize,
    pub discretization: Discretization,
    pub skip: bool,
    pub scan_chunk: Option<usize>,
    pub time_patches: usize,
    pub freq_patches: usize,
    pub paths: Paths,
    pub readout: Readout,
    /// Angular margin in radians, applied to the target class during training.
    pub margin: f64,
    pub scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            d_state: 16,
            expand: 2,
            conv_kernel: 4,
            depth: 2,
            discretization: Discretization::Zoh,
            skip: true,
            scan_chunk: None,
            time_patches: 12,
            freq_patches: 16,
            paths: Paths::St,
            readout: Readout::Last,
            margin: 0.7,
            scale: 30.0,
        }
    }
}

impl ModelConfig {
    pub fn ssm(&self) -> SsmConfig {
        SsmConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.expand,
            conv_kernel: self.conv_kernel,
            discretization: self.discretization,
            skip: self.skip,
            scan_chunk: self.scan_chunk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ssm().validate()?;
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be > 0, got {}", self.scale)));
        }
        if !(self.margin >= 0.0 && self.margin < std::f64::consts::PI) {
            return Err(Error::Config(format!("margin must lie in [0, pi), got {}", self.margin)));
        }
        Ok(())
    }
}
