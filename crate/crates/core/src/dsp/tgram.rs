//! Learnable time-domain front end: one large-kernel strided convolution
//! over the raw waveform, then `layers` blocks of
//! layer-norm -> leaky ReLU (0.01) -> kernel-3 same-padded convolution.
//! Output is `mel_bins x frames`, time-aligned with the log-Mel spectrogram.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::real::Real;
use crate::tensor::Tensor;

use super::wav::Waveform;
use super::FeatureConfig;

const LN_EPS: f64 = 1e-5;
const LEAK: f64 = 0.01;

#[derive(Clone, Debug)]
struct TgramLayer {
    gamma: ParamId,
    beta: ParamId,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct TgramFrontend {
    win: usize,
    hop: usize,
    channels: usize,
    kernel: ParamId,
    kernel_bias: ParamId,
    layers: Vec<TgramLayer>,
}

impl TgramFrontend {
    pub fn new<T: Real>(prefix: &str, cfg: &FeatureConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (w, m) = (cfg.win, cfg.mel_bins);
        let name = |s: String| format!("{prefix}.{s}");
        let kernel = store.register(name("conv.weight".into()), init::fan_in_uniform(rng, &[m, w], w))?;
        let kernel_bias = store.register(name("conv.bias".into()), init::fan_in_uniform(rng, &[m], w))?;
        let mut layers = Vec::with_capacity(cfg.tgram_layers);
        for l in 0..cfg.tgram_layers {
            layers.push(TgramLayer {
                gamma: store.register(name(format!("layer{l}.norm.gamma")), Tensor::full(&[m], T::one()))?,
                beta: store.register(name(format!("layer{l}.norm.beta")), Tensor::zeros(&[m]))?,
                weight: store.register(name(format!("layer{l}.conv.weight")), init::fan_in_uniform(rng, &[3, m, m], 3 * m))?,
                bias: store.register(name(format!("layer{l}.conv.bias")), init::fan_in_uniform(rng, &[m], 3 * m))?,
            });
        }
        Ok(Self {
            win: w,
            hop: cfg.hop,
            channels: m,
            kernel,
            kernel_bias,
            layers,
        })
    }

    pub fn kernel_id(&self) -> ParamId {
        self.kernel
    }

    /// Every bias and layer-norm shift of the front end.
    pub fn bias_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.kernel_bias];
        for l in &self.layers {
            ids.push(l.beta);
            ids.push(l.bias);
        }
        ids
    }

    pub fn frames_for(&self, len: usize) -> Option<usize> {
        (len >= self.win).then(|| 1 + (len - self.win) / self.hop)
    }

    /// Records the front end on `tape`. `signal` holds the raw samples;
    /// the result is `channels x frames`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, signal: Var) -> Result<Var> {
        let len = tape.value(signal).len();
        if self.frames_for(len).is_none() {
            return Err(Error::Input(format!(
                "waveform of {len} samples is shorter than one {}-sample window",
                self.win
            )));
        }
        let k = tape.param(self.kernel, store.value(self.kernel).clone());
        let kb = tape.param(self.kernel_bias, store.value(self.kernel_bias).clone());
        let mut h = tape.frame_conv(signal, k, Some(kb), self.hop);
        for l in &self.layers {
            let g = tape.param(l.gamma, store.value(l.gamma).clone());
            let b = tape.param(l.beta, store.value(l.beta).clone());
            let w = tape.param(l.weight, store.value(l.weight).clone());
            let wb = tape.param(l.bias, store.value(l.bias).clone());
            h = tape.layer_norm(h, Some(g), Some(b), T::of(LN_EPS));
            h = tape.leaky_relu(h, LEAK);
            h = tape.conv_same(h, w, Some(wb));
        }
        Ok(tape.transpose(h))
    }

    /// Evaluates the front end outside of training; returns `channels x frames`.
    pub fn tgram<T: Real>(&self, store: &ParamStore<T>, wave: &Waveform) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let samples = Tensor::from_fn(&[wave.len()], |i| T::of(wave.samples()[i] as f64));
        let s = tape.constant(samples);
        let out = self.forward(&mut tape, store, s)?;
        debug_assert_eq!(tape.value(out).rows(), self.channels);
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{central_difference, relative_error};
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(layers: usize) -> FeatureConfig {
        FeatureConfig {
            clip_samples: 64,
            win: 16,
            hop: 8,
            mel_bins: 5,
            tgram_layers: layers,
            ..Default::default()
        }
    }

    #[test]
    fn zero_waveform_with_zero_biases_gives_zero_conv_output() {
        let cfg = small_cfg(0);
        let mut store = ParamStore::<f64>::new();
        let fe = TgramFrontend::new("tg", &cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for id in fe.bias_ids() {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = fe.tgram(&store, &Waveform::new(vec![0.0; 64], 16_000).unwrap()).unwrap();
        assert_eq!(out.shape(), &[5, 7]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_shape_matches_mel_grid() {
        let cfg = FeatureConfig::default();
        let mut store = ParamStore::<f32>::new();
        let fe = TgramFrontend::new("tg", &cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let wave = Waveform::new((0..160_000).map(|i| ((i % 97) as f32 - 48.0) / 100.0).collect(), 16_000).unwrap();
        let out = fe.tgram(&store, &wave).unwrap();
        assert_eq!(out.shape(), &[128, 311]);
        assert!(out.is_finite());
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let cfg = small_cfg(3);
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fe = TgramFrontend::new("tg", &cfg, &mut store, &mut rng).unwrap();
        let signal: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..35).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss = |store: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let s = tape.constant(Tensor::new(&[64], signal.clone()).unwrap());
            let out = fe.forward(&mut tape, store, s).unwrap();
            let p = tape.constant(Tensor::new(&[5, 7], probe.clone()).unwrap());
            let prod = tape.mul(out, p);
            let l = tape.sum(prod);
            (tape, l)
        };
        let (tape, l) = loss(&store);
        let grads = tape.backward(l);
        let analytic = grads.params().find(|(id, _)| *id == fe.kernel_id()).unwrap().1.clone();

        let base = store.value(fe.kernel_id()).clone();
        let numeric = central_difference(&base, 1e-6, |k| {
            let mut s = store.clone();
            *s.value_mut(fe.kernel_id()) = k.clone();
            let (tape, l) = loss(&s);
            tape.value(l).data()[0]
        });
        let err = relative_error(analytic.data(), numeric.data());
        assert!(err < 1e-4, "relative error {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn frames_align_with_mel_framing(len in 16usize..400, hop in 1usize..20) {
            let cfg = FeatureConfig { clip_samples: 16, win: 16, hop, mel_bins: 3, tgram_layers: 1, ..Default::default() };
            let mut store = ParamStore::<f64>::new();
            let fe = TgramFrontend::new("tg", &cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let wave = Waveform::new(vec![0.1; len], 16_000).unwrap();
            let out = fe.tgram(&store, &wave).unwrap();
            prop_assert_eq!(out.cols(), cfg.frames_for(len).unwrap());
            prop_assert_eq!(out.rows(), 3);
        }
    }
}
