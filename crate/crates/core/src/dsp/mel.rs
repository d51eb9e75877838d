//! Log-Mel spectrogram: periodic Hann window, uncentered framing, power
//! spectrum, HTK-scale triangular filters without area normalization.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

use super::wav::Waveform;
use super::FeatureConfig;

/// `mel_bins x frames` matrix, row-major (`values[f * frames + n]`).
#[derive(Clone, Debug, PartialEq)]
pub struct MelGram {
    pub mel_bins: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl MelGram {
    pub fn new(mel_bins: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != mel_bins * frames {
            return Err(Error::Shape(format!(
                "{mel_bins} x {frames} spectrogram needs {} values, got {}",
                mel_bins * frames,
                values.len()
            )));
        }
        Ok(Self {
            mel_bins,
            frames,
            values,
        })
    }

    pub fn get(&self, f: usize, n: usize) -> f64 {
        self.values[f * self.frames + n]
    }

    /// The `mel_bins` values of frame `n`.
    pub fn frame(&self, n: usize) -> Vec<f64> {
        (0..self.mel_bins).map(|f| self.get(f, n)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK Mel scale between 0 Hz and Nyquist,
/// `mel_bins x (n_fft / 2 + 1)`.
pub fn mel_filterbank(mel_bins: usize, n_fft: usize, sample_rate: u32) -> Vec<f64> {
    let n_freqs = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let mut fb = vec![0.0; mel_bins * n_freqs];
    for m in 0..mel_bins {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_freqs {
            let f = k as f64 * nyquist / (n_freqs - 1) as f64;
            let down = (f - left) / (center - left);
            let up = (right - f) / (right - center);
            fb[m * n_freqs + k] = down.min(up).max(0.0);
        }
    }
    fb
}

/// Reusable log-Mel extractor (window, filterbank and FFT plan are cached).
pub struct LogMel {
    cfg: FeatureConfig,
    window: Vec<f64>,
    filters: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.win;
        let window = (0..w)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / w as f64).cos())
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            window,
            filters: mel_filterbank(cfg.mel_bins, w, cfg.sample_rate),
            fft: FftPlanner::new().plan_fft_forward(w),
        })
    }

    /// Mel-weighted power spectrogram before the log.
    pub fn mel_power(&self, wave: &Waveform) -> Result<MelGram> {
        let (w, hop, m) = (self.cfg.win, self.cfg.hop, self.cfg.mel_bins);
        let frames = self.cfg.frames_for(wave.len()).ok_or_else(|| {
            Error::Input(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                wave.len(),
                w
            ))
        })?;
        let n_freqs = w / 2 + 1;
        let mut out = vec![0.0; m * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); w];
        let mut power = vec![0.0; n_freqs];
        let s = wave.samples();
        for n in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(s[n * hop + i] as f64 * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for f in 0..m {
                let row = &self.filters[f * n_freqs..(f + 1) * n_freqs];
                out[f * frames + n] = row.iter().zip(&power).map(|(a, b)| a * b).sum();
            }
        }
        MelGram::new(m, frames, out)
    }

    /// `ln(mel_power + log_floor)`.
    pub fn log_mel(&self, wave: &Waveform) -> Result<MelGram> {
        let mut g = self.mel_power(wave)?;
        let floor = self.cfg.log_floor;
        g.values.iter_mut().for_each(|v| *v = (*v + floor).ln());
        Ok(g)
    }
}

/// One-shot convenience around [`LogMel`].
pub fn log_mel(wave: &Waveform, cfg: &FeatureConfig) -> Result<MelGram> {
    LogMel::new(cfg)?.log_mel(wave)
}
