//! One Mamba block:
//!
//! ```text
//! x -> LayerNorm -> in_proj -> (u, z)
//! u -> causal depthwise conv -> SiLU -> u'
//! delta = softplus(u' W_dt + b_dt), B = u' W_B, C = u' W_C
//! y = scan(u', delta, A, B, C) ;  out = (y * SiLU(z)) W_out + x
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, ScanVars, Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::real::Real;
use crate::tensor::Tensor;

use super::scan::Discretization;

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsmConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_kernel: usize,
    pub discretization: Discretization,
    /// Learnable `D * x` skip inside the scan.
    pub skip: bool,
    /// Use the chunked scan with this chunk size instead of the sequential one.
    pub scan_chunk: Option<usize>,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            d_state: 16,
            expand: 2,
            conv_kernel: 4,
            discretization: Discretization::Zoh,
            skip: true,
            scan_chunk: None,
        }
    }
}

impl SsmConfig {
    pub fn d_inner(&self) -> usize {
        self.d_model * self.expand
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.expand == 0 || self.conv_kernel == 0 {
            return Err(Error::Config(
                "d_model, d_state, expand and conv_kernel must all be >= 1".into(),
            ));
        }
        if self.scan_chunk == Some(0) {
            return Err(Error::Config("scan_chunk must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MambaBlock {
    cfg: SsmConfig,
    norm_gamma: ParamId,
    norm_beta: ParamId,
    in_proj: ParamId,
    conv_weight: ParamId,
    conv_bias: ParamId,
    dt_proj: ParamId,
    dt_bias: ParamId,
    b_proj: ParamId,
    c_proj: ParamId,
    a_log: ParamId,
    d_skip: Option<ParamId>,
    out_proj: ParamId,
}

fn bind<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, id: ParamId) -> Var {
    tape.param(id, store.value(id).clone())
}

impl MambaBlock {
    pub fn new<T: Real>(prefix: &str, cfg: &SsmConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (dm, di, n, k) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.conv_kernel);
        let name = |s: &str| format!("{prefix}.{s}");

        let a_log = Tensor::from_fn(&[di, n], |i| T::of(((i % n) + 1) as f64).ln());
        let dt_bias = Tensor::from_fn(&[di], |_| {
            let dt = rng.random_range(1e-3f64.ln()..1e-1f64.ln()).exp();
            T::of(init::inverse_softplus(dt))
        });

        Ok(Self {
            cfg: cfg.clone(),
            norm_gamma: store.register(name("norm.gamma"), Tensor::full(&[dm], T::one()))?,
            norm_beta: store.register(name("norm.beta"), Tensor::zeros(&[dm]))?,
            in_proj: store.register(name("in_proj"), init::fan_in_uniform(rng, &[dm, 2 * di], dm))?,
            conv_weight: store.register(name("conv.weight"), init::fan_in_uniform(rng, &[di, k], k))?,
            conv_bias: store.register(name("conv.bias"), init::fan_in_uniform(rng, &[di], k))?,
            dt_proj: store.register(name("dt_proj"), init::fan_in_uniform(rng, &[di, di], di))?,
            dt_bias: store.register(name("dt_bias"), dt_bias)?,
            b_proj: store.register(name("b_proj"), init::fan_in_uniform(rng, &[di, n], di))?,
            c_proj: store.register(name("c_proj"), init::fan_in_uniform(rng, &[di, n], di))?,
            a_log: store.register(name("a_log"), a_log)?,
            d_skip: if cfg.skip {
                Some(store.register(name("d_skip"), Tensor::full(&[di], T::one()))?)
            } else {
                None
            },
            out_proj: store.register(name("out_proj"), init::fan_in_uniform(rng, &[di, dm], di))?,
        })
    }

    pub fn config(&self) -> &SsmConfig {
        &self.cfg
    }

    /// Every bias of the block (useful for building zero-bias test fixtures).
    pub fn bias_ids(&self) -> Vec<ParamId> {
        vec![self.norm_beta, self.conv_bias, self.dt_bias]
    }

    /// Applies the block to a `seq_len x d_model` sequence.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let di = self.cfg.d_inner();
        let len = tape.value(x).rows();
        assert_eq!(tape.value(x).cols(), self.cfg.d_model, "block input width");

        let g = bind(tape, store, self.norm_gamma);
        let b = bind(tape, store, self.norm_beta);
        let h = tape.layer_norm(x, Some(g), Some(b), T::of(LN_EPS));

        let w_in = bind(tape, store, self.in_proj);
        let xz = tape.matmul(h, w_in);
        let u_idx = (0..len * di).map(|k| (k / di) * 2 * di + k % di).collect();
        let z_idx = (0..len * di).map(|k| (k / di) * 2 * di + di + k % di).collect();
        let u = tape.gather(xz, u_idx, &[len, di]);
        let z = tape.gather(xz, z_idx, &[len, di]);

        let cw = bind(tape, store, self.conv_weight);
        let cb = bind(tape, store, self.conv_bias);
        let u = tape.causal_depthwise(u, cw, Some(cb));
        let u = tape.silu(u);

        let w_dt = bind(tape, store, self.dt_proj);
        let b_dt = bind(tape, store, self.dt_bias);
        let dt = tape.matmul(u, w_dt);
        let dt = tape.add_row(dt, b_dt);
        let delta = tape.softplus(dt);

        let w_b = bind(tape, store, self.b_proj);
        let w_c = bind(tape, store, self.c_proj);
        let bm = tape.matmul(u, w_b);
        let cm = tape.matmul(u, w_c);
        let a_log = bind(tape, store, self.a_log);
        let d_skip = self.d_skip.map(|id| bind(tape, store, id));

        let y = tape.selective_scan(
            ScanVars {
                x: u,
                delta,
                a_log,
                b: bm,
                c: cm,
                d_skip,
            },
            self.cfg.discretization,
            self.cfg.scan_chunk,
        );

        let gate = tape.silu(z);
        let y = tape.mul(y, gate);
        let w_out = bind(tape, store, self.out_proj);
        let out = tape.matmul(y, w_out);
        tape.add(out, x)
    }
}
