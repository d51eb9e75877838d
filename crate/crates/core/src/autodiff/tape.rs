//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass together with the
//! intermediate values its backward rule needs. [`Tape::backward`] then walks
//! the record in reverse and returns a [`Gradients`] table. Tapes are cheap
//! and single-use: build one per sample, differentiate, drop.
//!
//! Shape mismatches inside a forward pass are programming errors and panic;
//! user-facing shape validation happens when models are constructed.

use crate::real::{axpy, dot, sigmoid, Real};
use crate::ssm::scan::{self, softplus, state_matrix, Discretization, ScanInputs};
use crate::tensor::Tensor;

use super::params::ParamId;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Marker in gather indices for a zero-filled output slot.
pub const PAD: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Silu,
    Softplus,
    LeakyRelu(f64),
    Exp,
    Neg,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Unary(Var, Unary),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    FrameConv {
        signal: Var,
        kernel: Var,
        bias: Option<Var>,
        hop: usize,
    },
    ConvSame {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    CausalDepthwise {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    SelectiveScan(Box<ScanRecord<T>>),
    ArcFace {
        cos: Var,
        label: usize,
        scale: T,
        probs: Vec<T>,
        target_slope: T,
    },
}

struct ScanRecord<T> {
    x: Var,
    delta: Var,
    a_log: Var,
    b: Var,
    c: Var,
    d_skip: Option<Var>,
    mode: Discretization,
    a_bar: Vec<T>,
    states: Vec<T>,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Inputs to [`Tape::selective_scan`].
#[derive(Clone, Copy, Debug)]
pub struct ScanVars {
    /// `seq_len x d_inner`
    pub x: Var,
    /// `seq_len x d_inner`, positive
    pub delta: Var,
    /// `d_inner x d_state`
    pub a_log: Var,
    /// `seq_len x d_state`
    pub b: Var,
    /// `seq_len x d_state`
    pub c: Var,
    /// `d_inner`
    pub d_skip: Option<Var>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf bound to a parameter slot.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.push(value, Op::Param(id), true)
    }

    /// A differentiable leaf not tied to any parameter (used by gradient checks).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data).expect("shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// `a[r, :] + bias` for every row `r`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        let c = va.cols();
        assert_eq!(vb.len(), c, "bias length must equal column count");
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, Op::AddRow(a, bias), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let n = vb.cols();
        assert_eq!(vb.rows(), k, "matmul inner dimension mismatch");
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = va.data()[i * k + p];
                if aip != T::zero() {
                    axpy(aip, vb.row(p), orow);
                }
            }
        }
        let out = Tensor::new(&[m, n], out).expect("shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let out = self.value(a).map(|x| apply_unary(f, x));
        let ng = self.ng(a);
        self.push(out, Op::Unary(a, f), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape).expect("reshape");
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// `out[j] = src[index[j]]`, or zero where `index[j] == PAD`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: &[usize]) -> Var {
        let vs = self.value(src).data();
        let data = index
            .iter()
            .map(|&i| if i == PAD { T::zero() } else { vs[i] })
            .collect();
        let out = Tensor::new(shape, data).expect("gather shape");
        let ng = self.ng(src);
        self.push(out, Op::Gather(src, index), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = (self.value(a).rows(), self.value(a).cols());
        let index = (0..r * c).map(|k| (k % r) * c + k / r).collect();
        self.gather(a, index, &[c, r])
    }

    /// Row `r` of a matrix as a `1 x cols` matrix.
    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let c = self.value(a).cols();
        self.gather(a, (r * c..(r + 1) * c).collect(), &[1, c])
    }

    /// Concatenates the flat data of `parts` and gives it `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: &[usize]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(shape, data).expect("concat shape");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum::<T>() / T::of_usize(v.len());
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// optional per-column affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>, eps: T) -> Var {
        let vx = self.value(x);
        let (r, c) = (vx.rows(), vx.cols());
        let cn = T::of_usize(c);
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        for i in 0..r {
            let row = vx.row(i);
            let mu = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / cn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mu) * rs;
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gamma {
            let g = self.value(g).data();
            assert_eq!(g.len(), c);
            for row in out.chunks_mut(c) {
                for (o, &gv) in row.iter_mut().zip(g) {
                    *o *= gv;
                }
            }
        }
        if let Some(b) = beta {
            let b = self.value(b).data();
            assert_eq!(b.len(), c);
            for row in out.chunks_mut(c) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let out = Tensor::new(vx.shape(), out).expect("shape");
        let ng = self.ng(x) || gamma.is_some_and(|g| self.ng(g)) || beta.is_some_and(|b| self.ng(b));
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Scales each row to unit Euclidean norm; norms below `eps` are clamped to `eps`.
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Var {
        let vx = self.value(x);
        let (r, c) = (vx.rows(), vx.cols());
        let mut out = vx.clone();
        let mut norms = vec![T::zero(); r];
        for i in 0..r {
            let n = vx.row(i).iter().map(|&v| v * v).sum::<T>().sqrt();
            norms[i] = n;
            let d = n.max(eps);
            for v in &mut out.data_mut()[i * c..(i + 1) * c] {
                *v /= d;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::NormalizeRows { x, norms, eps }, ng)
    }

    /// Strided valid convolution of a 1-D signal with `kernel` (`channels x width`).
    /// Output is `frames x channels` with `frames = 1 + (len - width) / hop`.
    pub fn frame_conv(&mut self, signal: Var, kernel: Var, bias: Option<Var>, hop: usize) -> Var {
        let (vs, vk) = (self.value(signal), self.value(kernel));
        let (ch, w) = (vk.rows(), vk.cols());
        let len = vs.len();
        assert!(len >= w && hop > 0, "signal shorter than kernel");
        let frames = 1 + (len - w) / hop;
        let mut out = vec![T::zero(); frames * ch];
        for n in 0..frames {
            let seg = &vs.data()[n * hop..n * hop + w];
            for c in 0..ch {
                out[n * ch + c] = dot(vk.row(c), seg);
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(ch) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let out = Tensor::new(&[frames, ch], out).expect("shape");
        let ng = self.ng(signal) || self.ng(kernel) || bias.is_some_and(|b| self.ng(b));
        self.push(
            out,
            Op::FrameConv {
                signal,
                kernel,
                bias,
                hop,
            },
            ng,
        )
    }

    /// Same-padded convolution along rows. `x` is `len x c_in`, `weight` is
    /// `k x c_out x c_in` with odd `k`; output is `len x c_out`.
    pub fn conv_same(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let (vx, vw) = (self.value(x), self.value(weight));
        let ws = vw.shape();
        assert_eq!(ws.len(), 3, "conv weight must be k x c_out x c_in");
        let (k, co, ci) = (ws[0], ws[1], ws[2]);
        assert!(k % 2 == 1, "same padding needs an odd kernel");
        assert_eq!(vx.cols(), ci);
        let len = vx.rows();
        let pad = k / 2;
        let mut out = vec![T::zero(); len * co];
        for n in 0..len {
            for tap in 0..k {
                let src = n + tap;
                if src < pad || src - pad >= len {
                    continue;
                }
                let xr = vx.row(src - pad);
                let wk = &vw.data()[tap * co * ci..(tap + 1) * co * ci];
                for o in 0..co {
                    out[n * co + o] += dot(&wk[o * ci..(o + 1) * ci], xr);
                }
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(co) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let out = Tensor::new(&[len, co], out).expect("shape");
        let ng = self.ng(x) || self.ng(weight) || bias.is_some_and(|b| self.ng(b));
        self.push(out, Op::ConvSame { x, weight, bias }, ng)
    }

    /// Per-channel causal convolution along rows: `x` is `len x d`, `weight`
    /// is `d x k`; output row `t` only sees input rows `t-k+1 ..= t`.
    pub fn causal_depthwise(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let (vx, vw) = (self.value(x), self.value(weight));
        let (len, d) = (vx.rows(), vx.cols());
        let k = vw.cols();
        assert_eq!(vw.rows(), d);
        let mut out = vec![T::zero(); len * d];
        for t in 0..len {
            for j in 0..k {
                let Some(src) = (t + j + 1).checked_sub(k) else {
                    continue;
                };
                for i in 0..d {
                    out[t * d + i] += vw.data()[i * k + j] * vx.data()[src * d + i];
                }
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(d) {
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
        let out = Tensor::new(&[len, d], out).expect("shape");
        let ng = self.ng(x) || self.ng(weight) || bias.is_some_and(|b| self.ng(b));
        self.push(out, Op::CausalDepthwise { x, weight, bias }, ng)
    }

    /// Selective state-space scan, fused with its discretization.
    ///
    /// `chunk = None` runs the sequential reference; `Some(c)` runs the
    /// chunked composition. Both record identical backward data.
    pub fn selective_scan(&mut self, v: ScanVars, mode: Discretization, chunk: Option<usize>) -> Var {
        let vx = self.value(v.x);
        let (l, d) = (vx.rows(), vx.cols());
        let n = self.value(v.a_log).cols();
        let params = scan::SelectiveParams {
            seq_len: l,
            d_inner: d,
            d_state: n,
            delta: self.value(v.delta).data(),
            a_log: self.value(v.a_log).data(),
            b: self.value(v.b).data(),
            c: self.value(v.c).data(),
            x: vx.data(),
            d_skip: v.d_skip.map(|s| self.value(s).data()),
        };
        let inputs: ScanInputs<T> = scan::discretize(&params, mode).expect("scan inputs");
        let states = match chunk {
            None => scan::scan_states_sequential(&inputs),
            Some(c) => scan::scan_states_chunked(&inputs, c).expect("chunk size"),
        };
        let mut y = inputs.skip.clone();
        for t in 0..l {
            let ct = &inputs.c[t * n..(t + 1) * n];
            for i in 0..d {
                let h = &states[(t * d + i) * n..(t * d + i + 1) * n];
                y[t * d + i] += dot(ct, h);
            }
        }
        let out = Tensor::new(&[l, d], y).expect("shape");
        let ng = [v.x, v.delta, v.a_log, v.b, v.c]
            .iter()
            .chain(v.d_skip.iter())
            .any(|&p| self.ng(p));
        let rec = ScanRecord {
            x: v.x,
            delta: v.delta,
            a_log: v.a_log,
            b: v.b,
            c: v.c,
            d_skip: v.d_skip,
            mode,
            a_bar: inputs.a_bar,
            states,
        };
        self.push(out, Op::SelectiveScan(Box::new(rec)), ng)
    }

    /// Additive angular margin loss for one sample.
    ///
    /// `cos` holds cosine similarities to every class (`1 x classes`). The
    /// target logit is `scale * cos(theta_y + margin)`, the others
    /// `scale * cos(theta_j)`; the result is the cross-entropy of those logits.
    pub fn arcface_loss(&mut self, cos: Var, label: usize, scale: T, margin: T) -> Var {
        let vc = self.value(cos).data();
        assert!(label < vc.len(), "label out of range");
        let (target, slope) = margin_cos(vc[label], margin);
        let logits: Vec<T> = vc
            .iter()
            .enumerate()
            .map(|(j, &c)| scale * if j == label { target } else { c })
            .collect();
        let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = logits.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + z.ln();
        let probs = logits.iter().map(|&v| (v - lse).exp()).collect();
        let loss = lse - logits[label];
        let ng = self.ng(cos);
        self.push(
            Tensor::scalar(loss),
            Op::ArcFace {
                cos,
                label,
                scale,
                probs,
                target_slope: slope,
            },
            ng,
        )
    }

    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape(), vec![T::one()]).expect("shape"));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.ng(v) {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn backprop(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    add_into(ga, gd);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    add_into(gb, gd);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    add_into(ga, gd);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    axpy(-T::one(), gd, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for k in 0..gd.len() {
                        ga[k] += gd[k] * vb[k];
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for k in 0..gd.len() {
                        gb[k] += gd[k] * va[k];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    axpy(*s, gd, ga);
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    add_into(ga, gd);
                }
                let c = g.cols();
                if let Some(gb) = self.grad_slot(grads, *bias) {
                    for row in gd.chunks(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for i in 0..m {
                        let gr = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(gr, vb.row(p));
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for i in 0..m {
                        let gr = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = va.data()[i * k + p];
                            if aip != T::zero() {
                                axpy(aip, gr, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::Unary(a, f) => {
                let (x, y) = (self.value(*a).data(), node.value.data());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for k in 0..gd.len() {
                        ga[k] += gd[k] * unary_slope(*f, x[k], y[k]);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    add_into(ga, gd);
                }
            }
            Op::Gather(src, index) => {
                if let Some(gs) = self.grad_slot(grads, *src) {
                    for (j, &i) in index.iter().enumerate() {
                        if i != PAD {
                            gs[i] += gd[j];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.grad_slot(grads, p) {
                        add_into(gp, &gd[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().for_each(|v| *v += gd[0]);
                }
            }
            Op::Mean(a) => {
                let n = T::of_usize(self.value(*a).len());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.iter_mut().for_each(|v| *v += gd[0] / n);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = g.cols();
                let r = g.rows();
                if let Some(b) = beta {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        for row in gd.chunks(c) {
                            add_into(gb, row);
                        }
                    }
                }
                if let Some(gm) = gamma {
                    if let Some(gg) = self.grad_slot(grads, *gm) {
                        for k in 0..gd.len() {
                            gg[k % c] += gd[k] * xhat[k];
                        }
                    }
                }
                let gamma_v = gamma.map(|gm| self.value(gm).data());
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let cn = T::of_usize(c);
                    let mut gh = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            gh[j] = gd[i * c + j] * gamma_v.map_or(T::one(), |gv| gv[j]);
                        }
                        let xr = &xhat[i * c..(i + 1) * c];
                        let m1 = gh.iter().copied().sum::<T>() / cn;
                        let m2 = dot(&gh, xr) / cn;
                        for j in 0..c {
                            gx[i * c + j] += rstd[i] * (gh[j] - m1 - xr[j] * m2);
                        }
                    }
                }
            }
            Op::NormalizeRows { x, norms, eps } => {
                let c = g.cols();
                let y = node.value.data();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (i, &n) in norms.iter().enumerate() {
                        let (yr, gr) = (&y[i * c..(i + 1) * c], &gd[i * c..(i + 1) * c]);
                        let gxr = &mut gx[i * c..(i + 1) * c];
                        if n > *eps {
                            let proj = dot(yr, gr);
                            for j in 0..c {
                                gxr[j] += (gr[j] - yr[j] * proj) / n;
                            }
                        } else {
                            axpy(T::one() / *eps, gr, gxr);
                        }
                    }
                }
            }
            Op::FrameConv {
                signal,
                kernel,
                bias,
                hop,
            } => {
                let (vs, vk) = (self.value(*signal).data(), self.value(*kernel));
                let (ch, w) = (vk.rows(), vk.cols());
                let frames = g.rows();
                if let Some(gk) = self.grad_slot(grads, *kernel) {
                    for n in 0..frames {
                        let seg = &vs[n * hop..n * hop + w];
                        for c in 0..ch {
                            let gv = gd[n * ch + c];
                            axpy(gv, seg, &mut gk[c * w..(c + 1) * w]);
                        }
                    }
                }
                if let Some(b) = bias {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        for row in gd.chunks(ch) {
                            add_into(gb, row);
                        }
                    }
                }
                if let Some(gs) = self.grad_slot(grads, *signal) {
                    for n in 0..frames {
                        for c in 0..ch {
                            axpy(gd[n * ch + c], vk.row(c), &mut gs[n * hop..n * hop + w]);
                        }
                    }
                }
            }
            Op::ConvSame { x, weight, bias } => {
                let (vx, vw) = (self.value(*x), self.value(*weight));
                let ws = vw.shape();
                let (k, co, ci) = (ws[0], ws[1], ws[2]);
                let len = vx.rows();
                let pad = k / 2;
                if let Some(gw) = self.grad_slot(grads, *weight) {
                    for n in 0..len {
                        for tap in 0..k {
                            let src = n + tap;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            let xr = vx.row(src - pad);
                            for o in 0..co {
                                let gv = gd[n * co + o];
                                let off = (tap * co + o) * ci;
                                axpy(gv, xr, &mut gw[off..off + ci]);
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        for row in gd.chunks(co) {
                            add_into(gb, row);
                        }
                    }
                }
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for n in 0..len {
                        for tap in 0..k {
                            let src = n + tap;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            let dst = src - pad;
                            for o in 0..co {
                                let off = (tap * co + o) * ci;
                                axpy(
                                    gd[n * co + o],
                                    &vw.data()[off..off + ci],
                                    &mut gx[dst * ci..(dst + 1) * ci],
                                );
                            }
                        }
                    }
                }
            }
            Op::CausalDepthwise { x, weight, bias } => {
                let (vx, vw) = (self.value(*x), self.value(*weight));
                let (len, d) = (vx.rows(), vx.cols());
                let k = vw.cols();
                if let Some(gw) = self.grad_slot(grads, *weight) {
                    for t in 0..len {
                        for j in 0..k {
                            let Some(src) = (t + j + 1).checked_sub(k) else {
                                continue;
                            };
                            for i in 0..d {
                                gw[i * k + j] += gd[t * d + i] * vx.data()[src * d + i];
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        for row in gd.chunks(d) {
                            add_into(gb, row);
                        }
                    }
                }
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for t in 0..len {
                        for j in 0..k {
                            let Some(src) = (t + j + 1).checked_sub(k) else {
                                continue;
                            };
                            for i in 0..d {
                                gx[src * d + i] += gd[t * d + i] * vw.data()[i * k + j];
                            }
                        }
                    }
                }
            }
            Op::SelectiveScan(rec) => self.backprop_scan(rec, gd, grads),
            Op::ArcFace {
                cos,
                label,
                scale,
                probs,
                target_slope,
            } => {
                if let Some(gc) = self.grad_slot(grads, *cos) {
                    for (j, &p) in probs.iter().enumerate() {
                        let dz = if j == *label { p - T::one() } else { p };
                        let dlogit = if j == *label { *target_slope } else { T::one() };
                        gc[j] += gd[0] * *scale * dz * dlogit;
                    }
                }
            }
        }
    }

    fn backprop_scan(&self, rec: &ScanRecord<T>, gy: &[T], grads: &mut [Option<Tensor<T>>]) {
        let vx = self.value(rec.x);
        let (l, d) = (vx.rows(), vx.cols());
        let n = self.value(rec.a_log).cols();
        let x = vx.data();
        let delta = self.value(rec.delta).data();
        let a_log = self.value(rec.a_log).data();
        let b = self.value(rec.b).data();
        let c = self.value(rec.c).data();
        let w = d * n;

        let mut g_x = vec![T::zero(); l * d];
        let mut g_delta = vec![T::zero(); l * d];
        let mut g_alog = vec![T::zero(); d * n];
        let mut g_b = vec![T::zero(); l * n];
        let mut g_c = vec![T::zero(); l * n];
        let mut g_skip = vec![T::zero(); d];

        if let Some(ds) = rec.d_skip {
            let dsv = self.value(ds).data();
            for t in 0..l {
                for i in 0..d {
                    g_skip[i] += gy[t * d + i] * x[t * d + i];
                    g_x[t * d + i] += gy[t * d + i] * dsv[i];
                }
            }
        }

        let a: Vec<T> = a_log.iter().map(|&v| state_matrix(v)).collect();
        // running dL/dh_t, carried backwards through the decay
        let mut gh = vec![T::zero(); w];
        for t in (0..l).rev() {
            let base = t * w;
            for i in 0..d {
                let gyv = gy[t * d + i];
                let xv = x[t * d + i];
                let dt = delta[t * d + i];
                for s in 0..n {
                    let k = i * n + s;
                    let hcur = rec.states[base + k];
                    g_c[t * n + s] += gyv * hcur;
                    let ghk = gh[k] + gyv * c[t * n + s];
                    let h_prev = if t == 0 {
                        T::zero()
                    } else {
                        rec.states[base - w + k]
                    };
                    let abar = rec.a_bar[base + k];
                    // a_bar = decay(dt * A)
                    let g_abar = ghk * h_prev;
                    let g_arg = g_abar * rec.mode.decay_slope(abar);
                    g_delta[t * d + i] += g_arg * a[k];
                    // dA/da_log = A
                    g_alog[k] += g_arg * dt * a[k];
                    // b_x = dt * B * x
                    let bv = b[t * n + s];
                    g_delta[t * d + i] += ghk * bv * xv;
                    g_b[t * n + s] += ghk * dt * xv;
                    g_x[t * d + i] += ghk * dt * bv;
                    gh[k] = ghk * abar;
                }
            }
        }

        for (v, gv) in [
            (rec.x, &g_x),
            (rec.delta, &g_delta),
            (rec.a_log, &g_alog),
            (rec.b, &g_b),
            (rec.c, &g_c),
        ] {
            if let Some(slot) = self.grad_slot(grads, v) {
                add_into(slot, gv);
            }
        }
        if let Some(ds) = rec.d_skip {
            if let Some(slot) = self.grad_slot(grads, ds) {
                add_into(slot, &g_skip);
            }
        }
    }
}

/// `cos(theta + m)` for `cos theta = c` and its derivative with respect to `c`.
pub fn margin_cos<T: Real>(c: T, margin: T) -> (T, T) {
    if margin == T::zero() {
        return (c, T::one());
    }
    let lim = T::one() - T::of(1e-7);
    let cc = c.max(-lim).min(lim);
    let sin = (T::one() - cc * cc).sqrt();
    let (sm, cm) = (margin.sin(), margin.cos());
    let value = c * cm - sin * sm;
    let slope = if c.abs() < lim { cm + sm * cc / sin } else { cm };
    (value, slope)
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn apply_unary<T: Real>(f: Unary, x: T) -> T {
    match f {
        Unary::Sigmoid => sigmoid(x),
        Unary::Silu => x * sigmoid(x),
        Unary::Softplus => softplus(x),
        Unary::LeakyRelu(s) => {
            if x > T::zero() {
                x
            } else {
                x * T::of(s)
            }
        }
        Unary::Exp => x.exp(),
        Unary::Neg => -x,
    }
}

#[inline]
fn unary_slope<T: Real>(f: Unary, x: T, y: T) -> T {
    match f {
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Silu => {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        }
        Unary::Softplus => {
            let twenty = T::of(20.0);
            if x > twenty {
                T::one()
            } else if x < -twenty {
                x.exp()
            } else {
                sigmoid(x)
            }
        }
        Unary::LeakyRelu(s) => {
            if x > T::zero() {
                T::one()
            } else {
                T::of(s)
            }
        }
        Unary::Exp => y,
        Unary::Neg => -T::one(),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` if `v` was unreachable.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter leaf that the loss reached.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }
}
