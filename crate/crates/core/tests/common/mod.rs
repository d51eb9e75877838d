//! Finite-difference gradient checks shared by the `gradients` test and the
//! acceptance report.

use estm::autodiff::gradcheck::{central_difference, check_inputs, relative_error, DEFAULT_STEP};
use estm::autodiff::{ParamStore, ScanVars, Tape, Var};
use estm::dsp::{FeatureConfig, LogMel, Waveform};
use estm::init;
use estm::network::{ClipInput, EstmModel, ModelConfig};
use estm::ssm::scan::Discretization;
use estm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One checked program: name, worst relative error over its inputs, tolerance.
pub struct GradCheck {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn ok(&self) -> bool {
        self.error < self.tolerance
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    init::normal(rng, shape, 1.0)
}

/// Contracts `y` against fixed random weights so every output element
/// contributes a distinct amount to the scalar loss.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(randn(&mut rng, &shape));
    let p = tape.mul(y, w);
    tape.sum(p)
}

fn worst(errors: Vec<f64>) -> f64 {
    errors.into_iter().fold(0.0, f64::max)
}

fn op(name: &'static str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> GradCheck {
    GradCheck {
        name,
        error: worst(check_inputs(&inputs, DEFAULT_STEP, build)),
        tolerance: 1e-4,
    }
}

/// Every fused or elementwise op the model uses, at random points.
pub fn op_checks() -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();

    for (name, f) in [
        ("softplus", Tape::softplus as fn(&mut Tape<f64>, Var) -> Var),
        ("sigmoid", Tape::sigmoid),
        ("silu", Tape::silu),
    ] {
        out.push(op(name, vec![randn(&mut rng, &[5, 4]).map(|v| 3.0 * v)], move |t, v| {
            let y = f(t, v[0]);
            project(t, y, 1)
        }));
    }

    out.push(op(
        "layer_norm",
        vec![randn(&mut rng, &[4, 6]), randn(&mut rng, &[6]), randn(&mut rng, &[6])],
        |t, v| {
            let y = t.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-5);
            project(t, y, 2)
        },
    ));

    out.push(op(
        "matmul",
        vec![randn(&mut rng, &[3, 5]), randn(&mut rng, &[5, 2])],
        |t, v| {
            let y = t.matmul(v[0], v[1]);
            project(t, y, 3)
        },
    ));

    out.push(op("normalize_rows", vec![randn(&mut rng, &[3, 5])], |t, v| {
        let y = t.normalize_rows(v[0], 1e-12);
        project(t, y, 4)
    }));

    out.push(op(
        "frame_conv",
        vec![randn(&mut rng, &[40]), randn(&mut rng, &[3, 8]), randn(&mut rng, &[3])],
        |t, v| {
            let y = t.frame_conv(v[0], v[1], Some(v[2]), 4);
            project(t, y, 5)
        },
    ));

    out.push(op(
        "conv_same",
        vec![randn(&mut rng, &[7, 3]), randn(&mut rng, &[3, 4, 3]), randn(&mut rng, &[4])],
        |t, v| {
            let y = t.conv_same(v[0], v[1], Some(v[2]));
            project(t, y, 6)
        },
    ));

    out.push(op(
        "causal_depthwise",
        vec![randn(&mut rng, &[6, 3]), randn(&mut rng, &[3, 4]), randn(&mut rng, &[3])],
        |t, v| {
            let y = t.causal_depthwise(v[0], v[1], Some(v[2]));
            project(t, y, 7)
        },
    ));

    let (l, d, n) = (6, 3, 2);
    for (name, mode, chunk) in [
        ("selective_scan", Discretization::Zoh, None),
        ("selective_scan_chunked", Discretization::Zoh, Some(4)),
        ("selective_scan_euler", Discretization::EulerLiteral, None),
    ] {
        let inputs = vec![
            randn(&mut rng, &[l, d]),
            randn(&mut rng, &[l, d]).map(|v| v - 1.0),
            randn(&mut rng, &[d, n]).map(|v| 0.5 * v),
            randn(&mut rng, &[l, n]),
            randn(&mut rng, &[l, n]),
            randn(&mut rng, &[d]),
        ];
        out.push(op(name, inputs, move |t, v| {
            // positive step sizes, and small enough to keep the Euler decay stable
            let sp = t.softplus(v[1]);
            let delta = t.scale(sp, 0.3);
            let y = t.selective_scan(
                ScanVars {
                    x: v[0],
                    delta,
                    a_log: v[2],
                    b: v[3],
                    c: v[4],
                    d_skip: Some(v[5]),
                },
                mode,
                chunk,
            );
            project(t, y, 8)
        }));
    }

    for (name, margin, scale) in [("arcface", 0.5, 8.0), ("arcface_no_margin", 0.0, 1.0)] {
        let cos = Tensor::from_fn(&[1, 4], |_| rng.random_range(-0.9..0.9));
        out.push(op(name, vec![cos], move |t, v| t.arcface_loss(v[0], 2, scale, margin)));
    }
    out
}

pub struct ModelCheck {
    pub worst: GradCheck,
    pub per_param: Vec<(String, f64)>,
    pub scalars: usize,
}

/// Every parameter of a tiny two-path model, through the Tgram front end,
/// both Mamba paths and the angular-margin loss.
pub fn model_check() -> ModelCheck {
    let mc = ModelConfig {
        d_model: 8,
        d_state: 2,
        depth: 1,
        time_patches: 3,
        freq_patches: 4,
        ..Default::default()
    };
    let fc = FeatureConfig {
        clip_samples: 96,
        win: 16,
        hop: 8,
        mel_bins: 4,
        tgram_layers: 1,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::<f64>::new();
    let model = EstmModel::new(&mc, &fc, 3, &mut store, &mut rng).unwrap();
    // order-one step sizes so the step-size projections carry measurable gradient
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("dt_bias") {
            let n = store.value(id).len();
            *store.value_mut(id) = init::normal(&mut rng, &[n], 1.0);
        }
    }
    let wave = Waveform::new((0..96).map(|_| rng.random_range(-0.5f32..0.5)).collect(), 16_000).unwrap();
    let input = ClipInput::<f64>::from_wave(&wave, &fc, &LogMel::new(&fc).unwrap()).unwrap();
    let label = 1;

    let loss_of = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let (l, _) = model.loss(&mut tape, s, &input, label).unwrap();
        tape.value(l).data()[0]
    };
    let mut tape = Tape::new();
    let (l, _) = model.loss(&mut tape, &store, &input, label).unwrap();
    let grads = tape.backward(l);
    let mut analytic: Vec<Option<Tensor<f64>>> = vec![None; store.len()];
    for (id, g) in grads.params() {
        analytic[id.0] = Some(g.clone());
    }

    let (mut all_a, mut all_n, mut per_param) = (Vec::new(), Vec::new(), Vec::new());
    for id in store.ids().collect::<Vec<_>>() {
        let a = analytic[id.0].clone().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        let numeric = central_difference(store.value(id), DEFAULT_STEP, |probe| {
            let mut s = store.clone();
            *s.value_mut(id) = probe.clone();
            loss_of(&s)
        });
        per_param.push((store.name(id).to_string(), relative_error(a.data(), numeric.data())));
        all_a.extend_from_slice(a.data());
        all_n.extend_from_slice(numeric.data());
    }
    ModelCheck {
        worst: GradCheck {
            name: "tiny model (all parameters)",
            error: relative_error(&all_a, &all_n),
            tolerance: 1e-3,
        },
        per_param,
        scalars: all_a.len(),
    }
}
