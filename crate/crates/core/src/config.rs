//! Experiment configuration: one TOML file with a table per concern.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::network::{ModelConfig, PatchGrid};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// False-positive-rate limit of the partial AUC.
    pub p: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { p: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Corpus directory or manifest file.
    pub corpus: PathBuf,
    pub cache_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: "data/synth".into(),
            cache_dir: "cache".into(),
            checkpoint: "runs/model.ckpt".into(),
            report_dir: "reports".into(),
        }
    }
}

impl PathsConfig {
    /// `label_map.json` next to the checkpoint.
    pub fn label_map(&self) -> PathBuf {
        self.checkpoint.with_file_name("label_map.json")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.report_dir.join("train_metrics.csv")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    /// Desk-scale settings for the synthetic corpus: 2 s clips, a narrow
    /// model and a higher learning rate so 30 epochs converge on one core.
    /// The head uses a small scale and margin: with four easy classes a
    /// scale of 30 drives every normal clip's probability to 1 and leaves
    /// the score almost no room to rank anomalies.
    pub fn toy() -> Self {
        let synth = SynthSpec::default();
        Self {
            features: FeatureConfig {
                clip_samples: synth.clip_len(),
                mel_bins: 64,
                ..FeatureConfig::default()
            },
            model: ModelConfig {
                d_model: 32,
                d_state: 8,
                depth: 1,
                time_patches: 8,
                freq_patches: 8,
                margin: 0.2,
                scale: 2.0,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 30,
                batch_size: 16,
                ..TrainConfig::default()
            },
            synth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if !(self.eval.p > 0.0 && self.eval.p <= 1.0) {
            return Err(Error::Config(format!("eval.p must lie in (0, 1], got {}", self.eval.p)));
        }
        PatchGrid::new(
            self.features.mel_bins,
            self.features.frames(),
            self.model.time_patches,
            self.model.freq_patches,
        )?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The effective configuration as echoed into checkpoints and reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Paths;

    #[test]
    fn defaults_and_toy_validate() {
        ExperimentConfig::default().validate().unwrap();
        ExperimentConfig::toy().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let mut cfg = ExperimentConfig::toy();
        cfg.model.paths = Paths::T;
        cfg.model.scan_chunk = Some(16);
        cfg.features.tsg = false;
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml("[train]\nseed = 3\n[model]\npaths = \"s\"\n").unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.model.paths, Paths::S);
        assert_eq!(cfg.features, FeatureConfig::default());
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        for bad in [
            "[train]\nlearning_rat = 1.0\n",
            "[nonsense]\n",
            "[train]\nbatch_size = 0\n",
            "[eval]\np = 0.0\n",
            "[model]\ntime_patches = 400\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
