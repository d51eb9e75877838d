//! TriStat gating: one sigmoid gate per time frame from the frame's median,
//! RMS and variance over frequency, de-centered by their mean over frames.

use crate::error::{Error, Result};
use crate::real::sigmoid;

use super::mel::MelGram;

#[derive(Clone, Debug, PartialEq)]
pub struct TsgGate {
    /// One entry per frame, each in `(0, 1)`.
    pub gate: Vec<f64>,
    pub alpha: f64,
    pub median: Vec<f64>,
    pub rms: Vec<f64>,
    pub variance: Vec<f64>,
    /// Mean of `median + rms + variance` over frames.
    pub mu: f64,
}

impl TsgGate {
    /// `median + rms + variance - mu` per frame.
    pub fn centered(&self) -> Vec<f64> {
        (0..self.gate.len())
            .map(|n| self.median[n] + self.rms[n] + self.variance[n] - self.mu)
            .collect()
    }
}

/// Median with the mean of the two central order statistics for even length.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn tsg_gate(mel: &MelGram, alpha: f64) -> Result<TsgGate> {
    if mel.frames == 0 || mel.mel_bins == 0 {
        return Err(Error::Input("spectrogram has no frames".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("gate scale must be > 0, got {alpha}")));
    }
    if !mel.is_finite() {
        return Err(Error::Input("spectrogram contains non-finite values".into()));
    }
    let n = mel.frames;
    let (mut med, mut rm, mut var) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for t in 0..n {
        let mut col = mel.frame(t);
        rm.push(rms(&col));
        var.push(variance(&col));
        med.push(median(&mut col));
    }
    let stats: Vec<f64> = (0..n).map(|t| med[t] + rm[t] + var[t]).collect();
    let mu = stats.iter().sum::<f64>() / n as f64;
    let gate = stats.iter().map(|s| sigmoid(alpha * (s - mu))).collect();
    Ok(TsgGate {
        gate,
        alpha,
        median: med,
        rms: rm,
        variance: var,
        mu,
    })
}

/// Scales every frame of `mel` by its gate value.
pub fn tsg_enhance(mel: &MelGram, gate: &TsgGate) -> Result<MelGram> {
    if gate.gate.len() != mel.frames {
        return Err(Error::Shape(format!(
            "gate has {} entries for {} frames",
            gate.gate.len(),
            mel.frames
        )));
    }
    let values = mel
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| gate.gate[k % mel.frames] * v)
        .collect();
    MelGram::new(mel.mel_bins, mel.frames, values)
}
