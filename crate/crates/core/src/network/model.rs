use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::dsp::estgram::{standardize_in_place, static_channels, STANDARDIZE_EPS};
use crate::dsp::{EstGram, FeatureConfig, LogMel, TgramFrontend, Waveform};
use crate::error::{Error, Result};
use crate::init;
use crate::real::Real;
use crate::ssm::MambaBlock;
use crate::tensor::Tensor;

use super::head::anomaly_score;
use super::patch::{Axis, PatchGrid};
use super::{ModelConfig, Readout};

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;
const TOKEN_INIT_STD: f64 = 0.02;

/// One clip as the network consumes it.
#[derive(Clone, Debug)]
pub enum ClipInput<T: Real> {
    /// Raw samples with the standardized log-Mel and gated log-Mel
    /// channels (`mel_bins x frames` each); the learnable time-domain
    /// channel is computed from `signal` on the tape.
    Wave {
        signal: Tensor<T>,
        mel: Tensor<T>,
        emel: Tensor<T>,
    },
    /// A complete standardized 3-channel block, flattened.
    Block(Tensor<T>),
}

impl<T: Real> ClipInput<T> {
    pub fn from_wave(wave: &Waveform, cfg: &FeatureConfig, extractor: &LogMel) -> Result<Self> {
        let st = static_channels(wave, cfg, extractor)?;
        let prep = |mut v: Vec<f64>| {
            standardize_in_place(&mut v);
            Tensor::from_fn(&[st.mel.mel_bins, st.mel.frames], |i| T::of(v[i]))
        };
        Ok(ClipInput::Wave {
            signal: Tensor::from_fn(&[wave.len()], |i| T::of(wave.samples()[i] as f64)),
            mel: prep(st.mel.values.clone()),
            emel: prep(st.emel.values.clone()),
        })
    }

    /// Standardizes every channel of `est`.
    pub fn from_estgram(est: &EstGram) -> Self {
        let s = est.standardized();
        ClipInput::Block(Tensor::from_fn(&[s.data.len()], |i| T::of(s.data[i])))
    }
}

#[derive(Clone, Debug)]
struct PathParams {
    axis: Axis,
    embed: ParamId,
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<MambaBlock>,
    norm_gamma: ParamId,
    norm_beta: ParamId,
    align: ParamId,
}

/// Variables recorded by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Fused `1 x d_model` feature.
    pub feature: Var,
    /// Cosine similarity to every class weight, `1 x classes`.
    pub cos: Var,
}

/// Fused feature and margin-free logits of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Inference {
    pub fn predicted(&self) -> usize {
        (0..self.logits.len())
            .max_by(|&a, &b| self.logits[a].total_cmp(&self.logits[b]))
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct EstmModel {
    cfg: ModelConfig,
    features: FeatureConfig,
    grid: PatchGrid,
    classes: usize,
    frontend: TgramFrontend,
    time: Option<PathParams>,
    freq: Option<PathParams>,
    head: ParamId,
}

fn bind<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, id: ParamId) -> Var {
    tape.param(id, store.value(id).clone())
}

impl EstmModel {
    /// Validates the whole configuration and registers every parameter.
    pub fn new<T: Real>(
        cfg: &ModelConfig,
        features: &FeatureConfig,
        classes: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        features.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let grid = PatchGrid::new(features.mel_bins, features.frames(), cfg.time_patches, cfg.freq_patches)?;
        let frontend = TgramFrontend::new("tgram", features, store, rng)?;
        let d = cfg.d_model;
        let mut path = |axis: Axis| -> Result<PathParams> {
            let prefix = match axis {
                Axis::Time => "time",
                Axis::Freq => "freq",
            };
            let p = grid.patch_len(axis);
            let count = grid.split(axis).count;
            let name = |s: &str| format!("{prefix}.{s}");
            let embed = store.register(name("embed"), init::fan_in_uniform(rng, &[p, d], p))?;
            let cls = store.register(name("cls"), init::normal(rng, &[1, d], TOKEN_INIT_STD))?;
            let pos = store.register(name("pos"), init::normal(rng, &[count + 1, d], TOKEN_INIT_STD))?;
            let blocks = (0..cfg.depth)
                .map(|k| MambaBlock::new(&name(&format!("block{k}")), &cfg.ssm(), store, rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(PathParams {
                axis,
                embed,
                cls,
                pos,
                blocks,
                norm_gamma: store.register(name("norm.gamma"), Tensor::full(&[d], T::one()))?,
                norm_beta: store.register(name("norm.beta"), Tensor::zeros(&[d]))?,
                align: store.register(name("align"), init::fan_in_uniform(rng, &[d, d], d))?,
            })
        };
        let time = cfg.paths.uses_time().then(|| path(Axis::Time)).transpose()?;
        let freq = cfg.paths.uses_freq().then(|| path(Axis::Freq)).transpose()?;
        let head = store.register("head.weight", init::fan_in_uniform(rng, &[classes, d], d))?;
        Ok(Self {
            cfg: cfg.clone(),
            features: features.clone(),
            grid,
            classes,
            frontend,
            time,
            freq,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn frontend(&self) -> &TgramFrontend {
        &self.frontend
    }

    /// Records the standardized, flattened 3-channel block.
    fn record_block<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, input: &ClipInput<T>) -> Result<Var> {
        let (m, n) = (self.grid.mel_bins, self.grid.frames);
        match input {
            ClipInput::Block(t) => {
                if t.len() != 3 * m * n {
                    return Err(Error::Shape(format!(
                        "feature block has {} values, model expects 3 x {m} x {n}",
                        t.len()
                    )));
                }
                Ok(tape.constant(t.clone().reshape(&[3 * m * n])?))
            }
            ClipInput::Wave { signal, mel, emel } => {
                for (name, t) in [("mel", mel), ("gated mel", emel)] {
                    if t.shape() != [m, n] {
                        return Err(Error::Shape(format!(
                            "{name} channel is {:?}, model expects [{m}, {n}]",
                            t.shape()
                        )));
                    }
                }
                if self.features.frames_for(signal.len()) != Some(n) {
                    return Err(Error::Shape(format!(
                        "waveform of {} samples does not give {n} frames",
                        signal.len()
                    )));
                }
                let s = tape.constant(signal.clone());
                let tg = self.frontend.forward(tape, store, s)?;
                let flat = tape.reshape(tg, &[1, m * n]);
                let tg = tape.layer_norm(flat, None, None, T::of(STANDARDIZE_EPS));
                let mel = tape.constant(mel.clone());
                let emel = tape.constant(emel.clone());
                Ok(tape.concat(&[mel, emel, tg], &[3 * m * n]))
            }
        }
    }

    /// Patch embedding with the class token placed first and positions added.
    pub fn embed<T: Real>(tape: &mut Tape<T>, patches: Var, weight: Var, cls: Var, pos: Var) -> Var {
        let tokens = tape.matmul(patches, weight);
        let (count, d) = (tape.value(tokens).rows(), tape.value(tokens).cols());
        let seq = tape.concat(&[cls, tokens], &[count + 1, d]);
        tape.add(seq, pos)
    }

    fn record_path<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, block: Var, p: &PathParams) -> Var {
        let count = self.grid.split(p.axis).count;
        let patches = tape.gather(block, self.grid.gather_index(p.axis), &[count, self.grid.patch_len(p.axis)]);
        let w = bind(tape, store, p.embed);
        let cls = bind(tape, store, p.cls);
        let pos = bind(tape, store, p.pos);
        let mut h = Self::embed(tape, patches, w, cls, pos);
        for b in &p.blocks {
            h = b.forward(tape, store, h);
        }
        let g = bind(tape, store, p.norm_gamma);
        let beta = bind(tape, store, p.norm_beta);
        h = tape.layer_norm(h, Some(g), Some(beta), T::of(LN_EPS));
        let at = match self.cfg.readout {
            Readout::Last => count,
            Readout::First => 0,
        };
        let summary = tape.row(h, at);
        let align = bind(tape, store, p.align);
        tape.matmul(summary, align)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, input: &ClipInput<T>) -> Result<Forward> {
        let block = self.record_block(tape, store, input)?;
        let paths: Vec<Var> = [&self.freq, &self.time]
            .into_iter()
            .flatten()
            .map(|p| self.record_path(tape, store, block, p))
            .collect();
        let feature = match paths[..] {
            [a, b] => tape.add(a, b),
            [a] => a,
            _ => unreachable!("at least one path is always built"),
        };
        let w = bind(tape, store, self.head);
        let wn = tape.normalize_rows(w, T::of(NORM_EPS));
        let wt = tape.transpose(wn);
        let f = tape.normalize_rows(feature, T::of(NORM_EPS));
        let cos = tape.matmul(f, wt);
        Ok(Forward { feature, cos })
    }

    /// Angular-margin cross-entropy of one clip.
    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &ClipInput<T>,
        label: usize,
    ) -> Result<(Var, Forward)> {
        if label >= self.classes {
            return Err(Error::Lookup(format!("label {label} out of range for {} classes", self.classes)));
        }
        let fwd = self.forward(tape, store, input)?;
        let loss = tape.arcface_loss(fwd.cos, label, T::of(self.cfg.scale), T::of(self.cfg.margin));
        Ok((loss, fwd))
    }

    /// Fused feature and margin-free logits `scale * cos`.
    pub fn infer<T: Real>(&self, store: &ParamStore<T>, input: &ClipInput<T>) -> Result<Inference> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, store, input)?;
        let s = self.cfg.scale;
        Ok(Inference {
            feature: tape.value(fwd.feature).data().iter().map(|v| v.as_f64()).collect(),
            logits: tape.value(fwd.cos).data().iter().map(|v| s * v.as_f64()).collect(),
        })
    }

    /// Negative log-probability of `class` for one clip.
    pub fn score<T: Real>(&self, store: &ParamStore<T>, input: &ClipInput<T>, class: usize) -> Result<f64> {
        anomaly_score(&self.infer(store, input)?.logits, class)
    }
}
