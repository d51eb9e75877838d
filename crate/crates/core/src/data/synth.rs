//! Deterministic synthetic machine sounds.
//!
//! Every class is an amplitude-modulated harmonic tone with its own
//! fundamental, harmonic profile and modulation rate, plus white noise.
//! Normal clips jitter those parameters slightly. Anomalous clips add one
//! event inside a time window: repeated tone bursts, a jump of the
//! fundamental, or band-limited noise.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::{quantize, write_wav, Waveform};
use crate::error::{Error, Result};

use super::corpus::{write_manifest, MANIFEST_NAME};
use super::{ClipRecord, Condition, DataSplit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub machine_type: String,
    pub machine_id: u32,
    pub fundamental_hz: f64,
    /// Relative amplitude of harmonics 1, 2, 3, ...
    pub harmonics: Vec<f64>,
    pub am_rate_hz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    Burst,
    HarmonicShift,
    BandNoise,
}

/// One injected event, with the frequency band it mainly occupies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub start_s: f64,
    pub duration_s: f64,
    pub band_hz: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub train_per_class: usize,
    pub test_normal_per_class: usize,
    pub test_anomaly_per_class: usize,
    pub noise_level: f64,
    pub classes: Vec<ClassSpec>,
    /// Anomalous clips cycle through these kinds.
    pub anomalies: Vec<AnomalyKind>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let class = |t: &str, id, f0, h: &[f64], am| ClassSpec {
            machine_type: t.to_string(),
            machine_id: id,
            fundamental_hz: f0,
            harmonics: h.to_vec(),
            am_rate_hz: am,
        };
        Self {
            seed: 0,
            sample_rate: 16_000,
            clip_seconds: 2.0,
            train_per_class: 40,
            test_normal_per_class: 10,
            test_anomaly_per_class: 10,
            noise_level: 0.02,
            classes: vec![
                class("fan", 0, 110.0, &[1.0, 0.6, 0.35, 0.2, 0.1], 4.0),
                class("fan", 1, 155.0, &[1.0, 0.2, 0.5, 0.1, 0.3], 7.0),
                class("pump", 0, 230.0, &[1.0, 0.8, 0.1, 0.4], 2.5),
                class("pump", 1, 320.0, &[1.0, 0.3, 0.3, 0.05, 0.2, 0.1], 11.0),
            ],
            anomalies: vec![AnomalyKind::Burst, AnomalyKind::HarmonicShift, AnomalyKind::BandNoise],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipKind {
    Train,
    TestNormal,
    TestAnomaly,
}

impl ClipKind {
    fn code(self) -> u64 {
        match self {
            ClipKind::Train => 1,
            ClipKind::TestNormal => 2,
            ClipKind::TestAnomaly => 3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("synthetic spec has no classes".into()));
        }
        if self.sample_rate == 0 || !(self.clip_seconds > 0.0) {
            return Err(Error::Config("sample_rate and clip_seconds must be positive".into()));
        }
        if self.test_anomaly_per_class > 0 && self.anomalies.is_empty() {
            return Err(Error::Config("anomalous clips requested but no anomaly kinds given".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for c in &self.classes {
            if !(c.fundamental_hz > 0.0) || c.harmonics.is_empty() || c.fundamental_hz * 2.0 >= nyquist {
                return Err(Error::Config(format!(
                    "class {}/{:02}: fundamental must be positive and well below Nyquist, with at least one harmonic",
                    c.machine_type, c.machine_id
                )));
            }
        }
        let mut keys: Vec<_> = self.classes.iter().map(|c| (&c.machine_type, c.machine_id)).collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("synthetic classes must be distinct machine instances".into()));
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    fn clip_rng(&self, class: usize, kind: ClipKind, index: usize) -> ChaCha8Rng {
        let mix = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ ((class as u64) << 40)
            ^ (kind.code() << 32)
            ^ index as u64;
        ChaCha8Rng::seed_from_u64(mix)
    }

    /// Renders one clip; anomalous clips also return the injected event.
    pub fn clip(&self, class: usize, kind: ClipKind, index: usize) -> Result<(Waveform, Option<AnomalyEvent>)> {
        let c = self
            .classes
            .get(class)
            .ok_or_else(|| Error::Config(format!("class index {class} out of range")))?;
        let mut rng = self.clip_rng(class, kind, index);
        let sr = self.sample_rate as f64;
        let len = self.clip_len();
        let secs = len as f64 / sr;

        let f0 = c.fundamental_hz * (1.0 + rng.random_range(-0.03..0.03));
        let amps: Vec<f64> = c.harmonics.iter().map(|a| a * (1.0 + rng.random_range(-0.15..0.15))).collect();
        let mut phases: Vec<f64> = amps.iter().map(|_| rng.random_range(0.0..TAU)).collect();
        let am_depth = rng.random_range(0.2..0.4);
        let am_phase = rng.random_range(0.0..TAU);
        let gain = rng.random_range(0.25..0.35);

        let event = if kind == ClipKind::TestAnomaly {
            let kind = self.anomalies[index % self.anomalies.len()];
            let duration_s = (secs * rng.random_range(0.4..0.6)).max(1.0 / sr);
            let start_s = rng.random_range(0.0..(secs - duration_s).max(1e-9));
            let band_hz = match kind {
                AnomalyKind::Burst => {
                    let f = rng.random_range(1500.0..3500.0);
                    (f - 60.0, f + 60.0)
                }
                AnomalyKind::HarmonicShift => {
                    let f = f0 * rng.random_range(1.3..1.45);
                    (f * 0.97, f * 1.03)
                }
                AnomalyKind::BandNoise => {
                    let lo = rng.random_range(4000.0..5500.0);
                    (lo, lo + 1000.0)
                }
            };
            Some(AnomalyEvent {
                kind,
                start_s,
                duration_s,
                band_hz,
            })
        } else {
            None
        };
        let window = event.map(|e| {
            let a = (e.start_s * sr) as usize;
            (a, (a + (e.duration_s * sr) as usize).min(len))
        });
        let in_event = |i: usize| window.is_some_and(|(a, b)| i >= a && i < b);

        // band noise as a dense sum of random sinusoids keeps it strictly in band
        let noise_partials: Vec<(f64, f64)> = match event {
            Some(AnomalyEvent {
                kind: AnomalyKind::BandNoise,
                band_hz: (lo, hi),
                ..
            }) => (0..120).map(|_| (rng.random_range(lo..hi), rng.random_range(0.0..TAU))).collect(),
            _ => Vec::new(),
        };
        let noise_norm = 1.0 / (noise_partials.len().max(1) as f64).sqrt();

        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let t = i as f64 / sr;
            let shifted = match event {
                Some(e) if e.kind == AnomalyKind::HarmonicShift && in_event(i) => 0.5 * (e.band_hz.0 + e.band_hz.1) / f0,
                _ => 1.0,
            };
            let mut tone = 0.0;
            for (k, (a, ph)) in amps.iter().zip(phases.iter_mut()).enumerate() {
                let fk = f0 * shifted * (k + 1) as f64;
                if fk < sr / 2.0 {
                    tone += a * ph.sin();
                }
                *ph = (*ph + TAU * fk / sr) % TAU;
            }
            let am = 1.0 + am_depth * (TAU * c.am_rate_hz * t + am_phase).sin();
            let mut x = gain * am * tone + self.noise_level * rng.random_range(-1.0..1.0) * 3f64.sqrt();
            if in_event(i) {
                let e = event.expect("inside an event");
                let te = t - e.start_s;
                match e.kind {
                    AnomalyKind::Burst => {
                        // 60 ms Hann pulses every 120 ms
                        let pos = te % 0.12;
                        if pos < 0.06 {
                            let env = 0.5 - 0.5 * (TAU * pos / 0.06).cos();
                            let f = 0.5 * (e.band_hz.0 + e.band_hz.1);
                            x += 0.6 * env * (TAU * f * t).sin();
                        }
                    }
                    AnomalyKind::BandNoise => {
                        let n: f64 = noise_partials.iter().map(|(f, p)| (TAU * f * t + p).sin()).sum();
                        x += 0.3 * noise_norm * n;
                    }
                    AnomalyKind::HarmonicShift => {}
                }
            }
            out.push(x);
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let norm = if peak > 0.95 { 0.95 / peak } else { 1.0 };
        let samples = out
            .iter()
            .map(|v| quantize((v * norm) as f32) as f32 / 32768.0)
            .collect();
        Ok((Waveform::new(samples, self.sample_rate)?, event))
    }
}

/// Writes the corpus under `out_dir` in the `<type>/<split>/<file>.wav`
/// layout plus `manifest.json`, returning the records.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<ClipRecord>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (ci, c) in spec.classes.iter().enumerate() {
        let runs = [
            (ClipKind::Train, spec.train_per_class),
            (ClipKind::TestNormal, spec.test_normal_per_class),
            (ClipKind::TestAnomaly, spec.test_anomaly_per_class),
        ];
        for (kind, count) in runs {
            let (split, condition) = match kind {
                ClipKind::Train => (DataSplit::Train, Condition::Normal),
                ClipKind::TestNormal => (DataSplit::Test, Condition::Normal),
                ClipKind::TestAnomaly => (DataSplit::Test, Condition::Anomaly),
            };
            for k in 0..count {
                let path = out_dir
                    .join(&c.machine_type)
                    .join(split.as_str())
                    .join(format!("{}_id_{:02}_{:08}.wav", condition.as_str(), c.machine_id, k));
                jobs.push((ci, kind, k, ClipRecord::new(path, &c.machine_type, c.machine_id, condition, split)?));
            }
        }
    }
    jobs.par_iter().try_for_each(|(ci, kind, k, rec)| -> Result<()> {
        let dir = rec.path.parent().expect("clip paths have a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (wave, _) = spec.clip(*ci, *kind, *k)?;
        write_wav(&rec.path, &wave)
    })?;
    let mut records: Vec<ClipRecord> = jobs.into_iter().map(|j| j.3).collect();
    records.sort();
    write_manifest(&out_dir.join(MANIFEST_NAME), out_dir, &records)?;
    Ok(records)
}
