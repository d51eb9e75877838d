use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate, amplitudes nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Crops the tail or zero-pads it so the clip is exactly `target_len` long.
    pub fn canonicalize(&self, target_len: usize, expected_rate: u32) -> Result<Waveform> {
        if self.sample_rate != expected_rate {
            return Err(Error::Config(format!(
                "sample rate {} Hz does not match configured {} Hz",
                self.sample_rate, expected_rate
            )));
        }
        if target_len == 0 {
            return Err(Error::Config("target length must be positive".into()));
        }
        let mut samples = self.samples.clone();
        samples.resize(target_len, 0.0);
        Ok(Waveform {
            samples,
            sample_rate: self.sample_rate,
        })
    }
}

/// Reads 16-bit signed PCM mono WAV. Other layouts are rejected.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |msg: String| Error::Wav {
        path: path.to_path_buf(),
        msg,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    // the file opened, so any failure from here on is a malformed stream
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| wav_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(format!(
            "expected 16-bit signed PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(|e| wav_err(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| wav_err(e.to_string()))
}

/// Writes 16-bit signed PCM mono WAV, rounding to the nearest code.
///
/// Samples that are already multiples of `1/32768` round-trip exactly.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &wave.samples {
        w.write_sample(quantize(s)).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

pub fn quantize(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}
