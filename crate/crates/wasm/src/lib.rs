//! Browser bindings for three pieces of the pipeline: the gated log-Mel of
//! a synthetic clip, the selective scan's response to an impulse, and the
//! ROC metrics. See `www/index.html`.

use std::f64::consts::PI;

use estm::dsp::mel::log_mel;
use estm::dsp::{tsg_enhance, tsg_gate, FeatureConfig, Waveform};
use estm::metrics::{auc, pauc, roc_curve};
use estm::ssm::scan::{discretize, scan_chunked, scan_sequential, Discretization, SelectiveParams};
use wasm_bindgen::prelude::*;

const SAMPLE_RATE: u32 = 16_000;
const WIN: usize = 1024;
const HOP: usize = 512;

fn js_err(e: estm::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Log-Mel, gate and gated log-Mel of one clip. Spectrogram values are
/// row-major `mel_bins x frames`.
#[wasm_bindgen]
pub struct GateView {
    mel_bins: usize,
    frames: usize,
    mel: Vec<f64>,
    enhanced: Vec<f64>,
    gate: Vec<f64>,
}

#[wasm_bindgen]
impl GateView {
    #[wasm_bindgen(getter)]
    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn mel(&self) -> Vec<f64> {
        self.mel.clone()
    }

    pub fn enhanced(&self) -> Vec<f64> {
        self.enhanced.clone()
    }

    pub fn gate(&self) -> Vec<f64> {
        self.gate.clone()
    }
}

/// A hum at `hum_hz` with two harmonics and a broadband click train of
/// `burst_s` seconds starting at `burst_at_s`, gated with sharpness `alpha`.
#[wasm_bindgen]
pub fn gate_tone_with_burst(
    seconds: f64,
    hum_hz: f64,
    burst_at_s: f64,
    burst_s: f64,
    burst_gain: f64,
    mel_bins: usize,
    alpha: f64,
) -> Result<GateView, JsError> {
    let len = (seconds.clamp(0.1, 10.0) * SAMPLE_RATE as f64) as usize;
    let sr = SAMPLE_RATE as f64;
    // fixed linear congruential noise so the picture is repeatable
    let mut state: u32 = 12345;
    let mut noise = move || {
        state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
        (state >> 8) as f64 / (1u32 << 24) as f64 * 2.0 - 1.0
    };
    let samples = (0..len)
        .map(|k| {
            let t = k as f64 / sr;
            let hum: f64 = [1.0, 0.5, 0.25]
                .iter()
                .enumerate()
                .map(|(h, a)| a * (2.0 * PI * hum_hz * (h + 1) as f64 * t).sin())
                .sum();
            let in_burst = t >= burst_at_s && t < burst_at_s + burst_s;
            let burst = if in_burst { burst_gain * noise() } else { 0.0 };
            (0.2 * hum + burst + 0.005 * noise()) as f32
        })
        .collect();
    let cfg = FeatureConfig {
        sample_rate: SAMPLE_RATE,
        clip_samples: len,
        win: WIN,
        hop: HOP,
        mel_bins,
        alpha,
        ..FeatureConfig::default()
    };
    cfg.validate().map_err(js_err)?;
    let wave = Waveform::new(samples, SAMPLE_RATE).map_err(js_err)?;
    let mel = log_mel(&wave, &cfg).map_err(js_err)?;
    let gate = tsg_gate(&mel, alpha).map_err(js_err)?;
    let enhanced = tsg_enhance(&mel, &gate).map_err(js_err)?;
    Ok(GateView {
        mel_bins: mel.mel_bins,
        frames: mel.frames,
        mel: mel.values,
        enhanced: enhanced.values,
        gate: gate.gate,
    })
}

/// Output of a one-channel, one-state scan run both ways.
#[wasm_bindgen]
pub struct ScanView {
    sequential: Vec<f64>,
    chunked: Vec<f64>,
    delta: Vec<f64>,
}

#[wasm_bindgen]
impl ScanView {
    pub fn sequential(&self) -> Vec<f64> {
        self.sequential.clone()
    }

    pub fn chunked(&self) -> Vec<f64> {
        self.chunked.clone()
    }

    pub fn delta(&self) -> Vec<f64> {
        self.delta.clone()
    }

    /// Largest absolute difference between the two kernels.
    pub fn max_abs_diff(&self) -> f64 {
        self.sequential
            .iter()
            .zip(&self.chunked)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Impulses at steps 0 and `len / 2`, with step size `delta` everywhere
/// except `delta_select` on `[select_at, select_at + select_len)`. A large
/// step there forgets the past and latches whatever arrives.
#[wasm_bindgen]
pub fn scan_impulse(
    len: usize,
    a_log: f64,
    delta: f64,
    delta_select: f64,
    select_at: usize,
    select_len: usize,
    chunk: usize,
) -> Result<ScanView, JsError> {
    let len = len.clamp(2, 4096);
    let steps: Vec<f64> = (0..len)
        .map(|t| {
            if t >= select_at && t < select_at + select_len {
                delta_select
            } else {
                delta
            }
        })
        .collect();
    let mut x = vec![0.0; len];
    x[0] = 1.0;
    x[len / 2] = 1.0;
    let ones = vec![1.0; len];
    let params = SelectiveParams {
        seq_len: len,
        d_inner: 1,
        d_state: 1,
        delta: &steps,
        a_log: &[a_log],
        b: &ones,
        c: &ones,
        x: &x,
        d_skip: None,
    };
    let inputs = discretize(&params, Discretization::Zoh).map_err(js_err)?;
    Ok(ScanView {
        sequential: scan_sequential(&inputs),
        chunked: scan_chunked(&inputs, chunk.clamp(1, len)).map_err(js_err)?,
        delta: steps,
    })
}

/// ROC vertices and areas for normal and anomalous score lists.
#[wasm_bindgen]
pub struct RocView {
    fpr: Vec<f64>,
    tpr: Vec<f64>,
    auc: f64,
    pauc: f64,
}

#[wasm_bindgen]
impl RocView {
    pub fn fpr(&self) -> Vec<f64> {
        self.fpr.clone()
    }

    pub fn tpr(&self) -> Vec<f64> {
        self.tpr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.auc
    }

    #[wasm_bindgen(getter)]
    pub fn pauc(&self) -> f64 {
        self.pauc
    }
}

#[wasm_bindgen]
pub fn roc(normal: &[f64], anomalous: &[f64], p: f64) -> Result<RocView, JsError> {
    let scores: Vec<f64> = normal.iter().chain(anomalous).copied().collect();
    let labels: Vec<bool> = normal.iter().map(|_| false).chain(anomalous.iter().map(|_| true)).collect();
    let curve = roc_curve(&scores, &labels).map_err(js_err)?;
    Ok(RocView {
        fpr: curve.iter().map(|c| c.0).collect(),
        tpr: curve.iter().map(|c| c.1).collect(),
        auc: auc(&scores, &labels).map_err(js_err)?,
        pauc: pauc(&scores, &labels, p).map_err(js_err)?,
    })
}
