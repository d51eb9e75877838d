//! Spectral front end: log-Mel spectrogram, TriStat gating, the learnable
//! Tgram, and their fusion into the 3-channel ESTgram.

pub mod cache;
pub mod estgram;
pub mod mel;
pub mod tgram;
pub mod tsg;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use estgram::{assemble_estgram, EstGram};
pub use mel::{LogMel, MelGram};
pub use tgram::TgramFrontend;
pub use tsg::{tsg_enhance, tsg_gate, TsgGate};
pub use wav::{read_wav, write_wav, Waveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// Canonical clip length in samples (crop or zero-pad to this).
    pub clip_samples: usize,
    pub win: usize,
    pub hop: usize,
    pub mel_bins: usize,
    /// Gate sharpness of the TriStat gate.
    pub alpha: f64,
    /// `false` builds the ungated [mel, mel, tgram] variant.
    pub tsg: bool,
    pub log_floor: f64,
    /// Normalize/activate/convolve blocks after the large-kernel Tgram conv.
    pub tgram_layers: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            clip_samples: 160_000,
            win: 1024,
            hop: 512,
            mel_bins: 128,
            alpha: 2.0,
            tsg: true,
            log_floor: 1e-10,
            tgram_layers: 3,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.win == 0 || self.hop == 0 || self.mel_bins == 0 {
            return Err(Error::Config(
                "sample_rate, win, hop and mel_bins must be positive".into(),
            ));
        }
        if self.clip_samples < self.win {
            return Err(Error::Config(format!(
                "clip_samples ({}) shorter than one window ({})",
                self.clip_samples, self.win
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be > 0".into()));
        }
        Ok(())
    }

    /// Frames produced for a clip of `len` samples without centering.
    pub fn frames_for(&self, len: usize) -> Option<usize> {
        (len >= self.win).then(|| 1 + (len - self.win) / self.hop)
    }

    pub fn frames(&self) -> usize {
        self.frames_for(self.clip_samples).unwrap_or(0)
    }
}
