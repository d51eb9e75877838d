//! Discretization and the linear recurrence `h_t = a_t * h_{t-1} + b_t`.
//!
//! Layouts (row-major):
//! - `a_bar`, `b_x`, states: `seq_len x d_inner x d_state`
//! - `c`: `seq_len x d_state` (shared by every channel)
//! - `skip`, outputs: `seq_len x d_inner`

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// How the continuous state matrix is turned into a per-step decay.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    /// Zero-order hold: `a_bar = exp(delta * A)`.
    #[default]
    Zoh,
    /// Forward Euler: `a_bar = 1 + delta * A`, the literal `A <- delta * A` update.
    EulerLiteral,
}

impl Discretization {
    #[inline]
    pub fn decay<T: Real>(self, delta: T, a: T) -> T {
        match self {
            Discretization::Zoh => (delta * a).exp(),
            Discretization::EulerLiteral => T::one() + delta * a,
        }
    }

    /// d(decay)/d(delta * A), given the decay value.
    #[inline]
    pub fn decay_slope<T: Real>(self, decay: T) -> T {
        match self {
            Discretization::Zoh => decay,
            Discretization::EulerLiteral => T::one(),
        }
    }
}

/// `ln(1 + e^x)` with saturating branches outside `[-20, 20]`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    let twenty = T::of(20.0);
    if x > twenty {
        x
    } else if x < -twenty {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_delta<T: Real>(raw: &[T]) -> Vec<T> {
    raw.iter().map(|&x| softplus(x)).collect()
}

/// Realized state matrix `A = -exp(a_log)`; strictly negative for finite `a_log`.
#[inline]
pub fn state_matrix<T: Real>(a_log: T) -> T {
    -a_log.exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanInputs<T> {
    pub seq_len: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub a_bar: Vec<T>,
    pub b_x: Vec<T>,
    pub c: Vec<T>,
    pub skip: Vec<T>,
}

impl<T: Real> ScanInputs<T> {
    /// Zero-filled inputs of the given shape.
    pub fn zeros(seq_len: usize, d_inner: usize, d_state: usize) -> Self {
        let n = seq_len * d_inner * d_state;
        Self {
            seq_len,
            d_inner,
            d_state,
            a_bar: vec![T::zero(); n],
            b_x: vec![T::zero(); n],
            c: vec![T::zero(); seq_len * d_state],
            skip: vec![T::zero(); seq_len * d_inner],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.seq_len * self.d_inner * self.d_state;
        if self.a_bar.len() != n
            || self.b_x.len() != n
            || self.c.len() != self.seq_len * self.d_state
            || self.skip.len() != self.seq_len * self.d_inner
        {
            return Err(Error::Shape(format!(
                "scan inputs inconsistent with (seq={}, d_inner={}, d_state={})",
                self.seq_len, self.d_inner, self.d_state
            )));
        }
        Ok(())
    }
}

/// Borrowed inputs to [`discretize`].
#[derive(Clone, Copy, Debug)]
pub struct SelectiveParams<'a, T> {
    pub seq_len: usize,
    pub d_inner: usize,
    pub d_state: usize,
    /// `seq_len x d_inner`, already positive.
    pub delta: &'a [T],
    /// `d_inner x d_state`
    pub a_log: &'a [T],
    /// `seq_len x d_state`
    pub b: &'a [T],
    /// `seq_len x d_state`
    pub c: &'a [T],
    /// `seq_len x d_inner`
    pub x: &'a [T],
    /// `d_inner`
    pub d_skip: Option<&'a [T]>,
}

/// Builds the per-step decay and input injection: `a_bar = decay(delta * A)`,
/// `b_x = delta * B * x`.
pub fn discretize<T: Real>(p: &SelectiveParams<'_, T>, mode: Discretization) -> Result<ScanInputs<T>> {
    let (l, d, n) = (p.seq_len, p.d_inner, p.d_state);
    if p.delta.len() != l * d
        || p.a_log.len() != d * n
        || p.b.len() != l * n
        || p.c.len() != l * n
        || p.x.len() != l * d
        || p.d_skip.is_some_and(|s| s.len() != d)
    {
        return Err(Error::Shape(format!(
            "selective parameters inconsistent with (seq={l}, d_inner={d}, d_state={n})"
        )));
    }
    let mut out = ScanInputs::zeros(l, d, n);
    for t in 0..l {
        for i in 0..d {
            let dt = p.delta[t * d + i];
            let xv = p.x[t * d + i];
            for s in 0..n {
                let a = state_matrix(p.a_log[i * n + s]);
                let k = (t * d + i) * n + s;
                out.a_bar[k] = mode.decay(dt, a);
                out.b_x[k] = dt * p.b[t * n + s] * xv;
            }
            if let Some(ds) = p.d_skip {
                out.skip[t * d + i] = ds[i] * xv;
            }
        }
    }
    out.c.copy_from_slice(p.c);
    if let Some(k) = out.a_bar.iter().position(|v| !v.is_finite()) {
        let (t, i, s) = (k / (d * n), (k / n) % d, k % n);
        return Err(Error::Numerical(format!(
            "non-finite decay at step {t}, channel {i}, state {s} (delta={}, a_log={})",
            p.delta[t * d + i],
            p.a_log[i * n + s]
        )));
    }
    if let Some(k) = out.b_x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite input injection at flat index {k}"
        )));
    }
    Ok(out)
}

fn readout<T: Real>(inp: &ScanInputs<T>, states: &[T]) -> Vec<T> {
    let (d, n) = (inp.d_inner, inp.d_state);
    let mut y = inp.skip.clone();
    for t in 0..inp.seq_len {
        let c = &inp.c[t * n..(t + 1) * n];
        for i in 0..d {
            let h = &states[(t * d + i) * n..(t * d + i + 1) * n];
            let mut acc = T::zero();
            for s in 0..n {
                acc += c[s] * h[s];
            }
            y[t * d + i] += acc;
        }
    }
    y
}

/// All hidden states of the recurrence from a zero initial state.
pub fn scan_states_sequential<T: Real>(inp: &ScanInputs<T>) -> Vec<T> {
    let w = inp.d_inner * inp.d_state;
    let mut h = vec![T::zero(); inp.seq_len * w];
    for t in 0..inp.seq_len {
        let base = t * w;
        if t == 0 {
            h[..w].copy_from_slice(&inp.b_x[..w]);
        } else {
            let (prev, cur) = h.split_at_mut(base);
            let prev = &prev[base - w..];
            let (a, bx) = (&inp.a_bar[base..base + w], &inp.b_x[base..base + w]);
            for (((c, &p), &a), &b) in cur[..w].iter_mut().zip(prev).zip(a).zip(bx) {
                *c = a * p + b;
            }
        }
    }
    h
}

/// Exact sequential reference: `y_t = <C_t, h_t> + skip_t`.
pub fn scan_sequential<T: Real>(inp: &ScanInputs<T>) -> Vec<T> {
    readout(inp, &scan_states_sequential(inp))
}

/// Hidden states via chunked associative composition.
///
/// Each chunk is scanned from a zero state while tracking the running
/// product of decays; chunk carries are then propagated left to right and
/// folded back in with `h_t = local_t + decay_prod_t * carry_in`.
pub fn scan_states_chunked<T: Real>(inp: &ScanInputs<T>, chunk: usize) -> Result<Vec<T>> {
    if chunk == 0 {
        return Err(Error::Config("scan chunk size must be >= 1".into()));
    }
    let w = inp.d_inner * inp.d_state;
    let len = inp.seq_len * w;
    let mut local = vec![T::zero(); len];
    let mut prod = vec![T::zero(); len];

    local
        .par_chunks_mut(chunk * w)
        .zip(prod.par_chunks_mut(chunk * w))
        .enumerate()
        .for_each(|(ci, (loc, pr))| {
            let t0 = ci * chunk;
            let steps = loc.len() / w;
            for j in 0..steps {
                let g = (t0 + j) * w;
                if j == 0 {
                    loc[..w].copy_from_slice(&inp.b_x[g..g + w]);
                    pr[..w].copy_from_slice(&inp.a_bar[g..g + w]);
                } else {
                    let (pl, cl) = loc.split_at_mut(j * w);
                    let (pp, cp) = pr.split_at_mut(j * w);
                    let (pl, pp) = (&pl[(j - 1) * w..], &pp[(j - 1) * w..]);
                    let (a, bx) = (&inp.a_bar[g..g + w], &inp.b_x[g..g + w]);
                    for (((c, &p), &a), &b) in cl[..w].iter_mut().zip(pl).zip(a).zip(bx) {
                        *c = a * p + b;
                    }
                    for ((c, &p), &a) in cp[..w].iter_mut().zip(pp).zip(a) {
                        *c = a * p;
                    }
                }
            }
        });

    let n_chunks = inp.seq_len.div_ceil(chunk);
    let mut carries = vec![T::zero(); n_chunks * w];
    for ci in 1..n_chunks {
        let last = (ci * chunk - 1) * w;
        let (done, rest) = carries.split_at_mut(ci * w);
        let prev = &done[(ci - 1) * w..];
        for k in 0..w {
            rest[k] = local[last + k] + prod[last + k] * prev[k];
        }
    }

    local
        .par_chunks_mut(chunk * w)
        .zip(prod.par_chunks(chunk * w))
        .enumerate()
        .skip(1)
        .for_each(|(ci, (loc, pr))| {
            let carry = &carries[ci * w..(ci + 1) * w];
            for (lv, pv) in loc.chunks_mut(w).zip(pr.chunks(w)) {
                for ((l, &p), &c) in lv.iter_mut().zip(pv).zip(carry) {
                    *l = *l + p * c;
                }
            }
        });
    Ok(local)
}

/// Chunked scan; mathematically identical to [`scan_sequential`].
pub fn scan_chunked<T: Real>(inp: &ScanInputs<T>, chunk: usize) -> Result<Vec<T>> {
    Ok(readout(inp, &scan_states_chunked(inp, chunk)?))
}
