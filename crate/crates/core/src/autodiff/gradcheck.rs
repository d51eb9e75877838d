//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to verify.

use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Step used for central differences at f64.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Norm-relative error `|a - n| / max(|a|, |n|)`; zero when both sides are
/// below `1e-10` in norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-10 {
        return 0.0;
    }
    diff / scale
}

/// Numeric gradient of `f` at `x` by central differences.
pub fn central_difference(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (up - down) / (2.0 * h);
    }
    out
}

/// Checks every input of a scalar-valued tape program.
///
/// `build` receives a fresh tape and one differentiable leaf per input and
/// must return the scalar loss. Returns the relative error per input.
pub fn check_inputs(inputs: &[Tensor<f64>], h: f64, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> Vec<f64> {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.variable(v.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.variable(v.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss);

    (0..inputs.len())
        .map(|i| {
            let analytic = grads
                .get(vars[i])
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
            let mut vals = inputs.to_vec();
            let numeric = central_difference(&inputs[i], h, |probe| {
                vals[i] = probe.clone();
                eval(&vals)
            });
            relative_error(&analytic, numeric.data())
        })
        .collect()
}
