use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

use super::mel::{LogMel, MelGram};
use super::tgram::TgramFrontend;
use super::tsg::{tsg_enhance, tsg_gate, TsgGate};
use super::wav::Waveform;
use super::FeatureConfig;

/// Variance floor used when standardizing a channel.
pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Three stacked `mel_bins x frames` channels `[mel, enhanced mel, tgram]`,
/// stored channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EstGram {
    pub mel_bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl EstGram {
    pub fn new(mel_bins: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * mel_bins * frames {
            return Err(Error::Shape(format!(
                "3 x {mel_bins} x {frames} feature block needs {} values, got {}",
                3 * mel_bins * frames,
                data.len()
            )));
        }
        Ok(Self {
            mel_bins,
            frames,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [3, self.mel_bins, self.frames]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let size = self.mel_bins * self.frames;
        &self.data[c * size..(c + 1) * size]
    }

    pub fn channel_gram(&self, c: usize) -> MelGram {
        MelGram {
            mel_bins: self.mel_bins,
            frames: self.frames,
            values: self.channel(c).to_vec(),
        }
    }

    pub fn get(&self, c: usize, f: usize, n: usize) -> f64 {
        self.data[(c * self.mel_bins + f) * self.frames + n]
    }

    /// Each channel shifted and scaled to zero mean and unit variance.
    pub fn standardized(&self) -> EstGram {
        let mut data = self.data.clone();
        let size = self.mel_bins * self.frames;
        for ch in data.chunks_mut(size) {
            standardize_in_place(ch);
        }
        EstGram {
            mel_bins: self.mel_bins,
            frames: self.frames,
            data,
        }
    }
}

/// `(x - mean) / sqrt(var + STANDARDIZE_EPS)` with population variance.
pub fn standardize_in_place(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let r = 1.0 / (var + STANDARDIZE_EPS).sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) * r);
}

pub fn assemble_estgram(mel: &MelGram, emel: &MelGram, tgram: &MelGram) -> Result<EstGram> {
    for (name, g) in [("enhanced mel", emel), ("tgram", tgram)] {
        if (g.mel_bins, g.frames) != (mel.mel_bins, mel.frames) {
            return Err(Error::Shape(format!(
                "{name} is {} x {} but mel is {} x {}",
                g.mel_bins, g.frames, mel.mel_bins, mel.frames
            )));
        }
    }
    let mut data = Vec::with_capacity(3 * mel.values.len());
    data.extend_from_slice(&mel.values);
    data.extend_from_slice(&emel.values);
    data.extend_from_slice(&tgram.values);
    EstGram::new(mel.mel_bins, mel.frames, data)
}

/// The two fixed channels of a clip: log-Mel and its gated version
/// (or the log-Mel twice when gating is disabled), plus the gate itself.
#[derive(Clone, Debug)]
pub struct StaticChannels {
    pub mel: MelGram,
    pub emel: MelGram,
    pub gate: Option<TsgGate>,
}

pub fn static_channels(wave: &Waveform, cfg: &FeatureConfig, extractor: &LogMel) -> Result<StaticChannels> {
    let mel = extractor.log_mel(wave)?;
    if !cfg.tsg {
        return Ok(StaticChannels {
            emel: mel.clone(),
            mel,
            gate: None,
        });
    }
    let gate = tsg_gate(&mel, cfg.alpha)?;
    let emel = tsg_enhance(&mel, &gate)?;
    Ok(StaticChannels {
        mel,
        emel,
        gate: Some(gate),
    })
}

/// Full (unstandardized) feature block for one canonical clip.
pub fn extract_estgram<T: Real>(
    wave: &Waveform,
    cfg: &FeatureConfig,
    extractor: &LogMel,
    frontend: &TgramFrontend,
    store: &ParamStore<T>,
) -> Result<EstGram> {
    let st = static_channels(wave, cfg, extractor)?;
    let tg: Tensor<T> = frontend.tgram(store, wave)?;
    let tgram = MelGram::new(tg.rows(), tg.cols(), tg.data().iter().map(|v| v.as_f64()).collect())?;
    assemble_estgram(&st.mel, &st.emel, &tgram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram(m: usize, n: usize, f: impl Fn(usize) -> f64) -> MelGram {
        MelGram::new(m, n, (0..m * n).map(f).collect()).unwrap()
    }

    #[test]
    fn assembly_shape_and_channel_identity() {
        let mel = gram(128, 311, |k| (k as f64).sin());
        let emel = gram(128, 311, |k| (k as f64).cos());
        let tg = gram(128, 311, |k| k as f64 * 1e-3);
        let e = assemble_estgram(&mel, &emel, &tg).unwrap();
        assert_eq!(e.shape(), [3, 128, 311]);
        assert_eq!(e.channel(0), &mel.values[..]);
        assert_eq!(e.channel(1), &emel.values[..]);
        assert_eq!(e.channel(2), &tg.values[..]);
        assert_eq!(e.get(2, 5, 7), tg.get(5, 7));
    }

    #[test]
    fn assembly_rejects_mismatched_shapes() {
        let a = gram(4, 5, |_| 0.0);
        let b = gram(4, 6, |_| 0.0);
        assert!(matches!(assemble_estgram(&a, &a, &b), Err(Error::Shape(_))));
        assert!(matches!(assemble_estgram(&a, &b, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn standardized_channels_have_zero_mean_unit_std() {
        let mel = gram(16, 20, |k| 3.0 + (k as f64 * 0.37).sin() * 4.0);
        let emel = gram(16, 20, |k| (k % 7) as f64 - 10.0);
        let tg = gram(16, 20, |k| (k as f64).sqrt());
        let s = assemble_estgram(&mel, &emel, &tg).unwrap().standardized();
        for c in 0..3 {
            let ch = s.channel(c);
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let std = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-5 && (std - 1.0).abs() < 1e-5, "channel {c}: {mean} {std}");
        }
    }

    fn test_cfg(tsg: bool) -> FeatureConfig {
        FeatureConfig {
            clip_samples: 4096,
            win: 256,
            hop: 128,
            mel_bins: 16,
            tgram_layers: 1,
            tsg,
            ..Default::default()
        }
    }

    fn burst_wave() -> Waveform {
        let s = (0..4096)
            .map(|i| {
                let amp = if (1500..2300).contains(&i) { 0.8 } else { 0.05 };
                amp * (i as f32 * 0.3).sin()
            })
            .collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn enhanced_channel_is_gate_times_mel_and_extraction_is_deterministic() {
        let cfg = test_cfg(true);
        let lm = LogMel::new(&cfg).unwrap();
        let mut store = ParamStore::<f32>::new();
        let fe = TgramFrontend::new("tg", &cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let w = burst_wave();
        let e = extract_estgram(&w, &cfg, &lm, &fe, &store).unwrap();
        let again = extract_estgram(&w, &cfg, &lm, &fe, &store).unwrap();
        assert_eq!(e, again);

        let gate = tsg_gate(&e.channel_gram(0), cfg.alpha).unwrap();
        for f in 0..e.mel_bins {
            for n in 0..e.frames {
                assert_eq!(e.get(1, f, n), gate.gate[n] * e.get(0, f, n));
            }
        }
    }

    #[test]
    fn ungated_variant_repeats_mel() {
        let cfg = test_cfg(false);
        let lm = LogMel::new(&cfg).unwrap();
        let st = static_channels(&burst_wave(), &cfg, &lm).unwrap();
        assert_eq!(st.mel, st.emel);
        assert!(st.gate.is_none());
    }
}
