//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends a node holding its output value and whatever it
//! needs for the vector-Jacobian product. Backward walks the nodes in exact
//! reverse order of recording.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::kernels::{self, gemm_abt_acc, gemm_atb_acc, matmul_plan};
use super::tensor::{broadcast_shapes, broadcast_strides, for_each_broadcast};
use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Matmul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv2d {
        x: Var,
        kernel: Var,
    },
    SpectralAmplitude {
        x: Var,
        freqs: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradient of a scalar loss with respect to every recorded value that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sums `g` (of broadcast shape `out`) down to `target` shape.
fn reduce_to(g: &Tensor, target: &[usize]) -> Tensor {
    if g.shape() == target {
        return g.clone();
    }
    let out = g.shape();
    let st = broadcast_strides(target, out);
    let zero = vec![0; out.len()];
    let mut acc = Tensor::zeros(target);
    let (gd, ad) = (g.data(), acc.data_mut());
    for_each_broadcast(out, &st, &zero, |o, t, _| ad[t] += gd[o]);
    acc
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
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

    /// A value that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not a parameter.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records the current value of a parameter. Repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = broadcast_shapes(av.shape(), bv.shape())?;
        let value = if av.shape() == bv.shape() {
            av.zip_map(bv, f)
        } else {
            let sa = broadcast_strides(av.shape(), &out_shape);
            let sb = broadcast_strides(bv.shape(), &out_shape);
            let mut out = vec![0.0; out_shape.iter().product()];
            let (ad, bd) = (av.data(), bv.data());
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
            Tensor::new(out_shape, out)?
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Matmul(a, b), ng))
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let value = kernels::permute(self.value(x), perm)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Permute(x, perm.to_vec()), ng))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::Axis {
                axis,
                start,
                end: start + len,
                shape,
            });
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Narrow { x, axis, start }, ng))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::Axis {
                axis,
                start: 0,
                end: 0,
                shape: first,
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &e)| i != axis && e != first[i])
            {
                return Err(TensorError::Broadcast(first.clone(), s.to_vec()));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Appends `count` zero entries along `axis`.
    pub fn pad_zeros(&mut self, x: Var, axis: usize, count: usize) -> Result<Var, TensorError> {
        if count == 0 {
            return Ok(x);
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = count;
        let zeros = self.constant(Tensor::zeros(&shape));
        self.concat(&[x, zeros], axis)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                axis,
                start: 0,
                end: 0,
                shape,
            });
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let value = Tensor::new(out_shape, out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SumAxis { x, axis }, ng))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = kernels::softmax_lastdim(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Softmax(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let value = kernels::layer_norm(xv, self.value(gain), self.value(bias))?;
        let (xhat, inv_std) = kernels::layer_norm_stats(xv);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn conv2d_same(&mut self, x: Var, kernel: Var) -> Result<Var, TensorError> {
        let value = kernels::conv2d_same(self.value(x), self.value(kernel))?;
        let ng = self.ng(x) || self.ng(kernel);
        Ok(self.push(value, Op::Conv2d { x, kernel }, ng))
    }

    /// Channel-mean DFT magnitude of `x: [B, T, d]` at the given frequency bins → `[B, k]`.
    pub fn spectral_amplitude(&mut self, x: Var, freqs: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(TensorError::Broadcast(shape, vec![0, 0, 0]));
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * freqs.len()];
        for bi in 0..b {
            for (i, &f) in freqs.iter().enumerate() {
                let (re, im) = dft_bin(xd, bi, t, d, f);
                out[bi * freqs.len() + i] = re
                    .iter()
                    .zip(&im)
                    .map(|(r, m)| (r * r + m * m).sqrt())
                    .sum::<f64>()
                    / d as f64;
            }
        }
        let value = Tensor::new(vec![b, freqs.len()], out)?;
        let ng = self.ng(x);
        Ok(self.push(
            value,
            Op::SpectralAmplitude {
                x,
                freqs: freqs.to_vec(),
            },
            ng,
        ))
    }

    /// Gradients of the scalar `loss` with respect to all recorded values.
    pub fn gradients(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `∂loss/∂param` into every parameter recorded on this tape.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), TensorError> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn backprop(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                send(*a, reduce_to(g, self.shape(*a)), grads);
                send(*b, reduce_to(g, self.shape(*b)), grads);
            }
            Op::Sub(a, b) => {
                send(*a, reduce_to(g, self.shape(*a)), grads);
                send(*b, reduce_to(&g.map(|v| -v), self.shape(*b)), grads);
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let out = g.shape();
                let sa = broadcast_strides(av.shape(), out);
                let sb = broadcast_strides(bv.shape(), out);
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                {
                    let (gam, gbm) = (ga.data_mut(), gb.data_mut());
                    for_each_broadcast(out, &sa, &sb, |o, ia, ib| {
                        if is_div {
                            gam[ia] += gd[o] / bd[ib];
                            gbm[ib] -= gd[o] * ad[ia] / (bd[ib] * bd[ib]);
                        } else {
                            gam[ia] += gd[o] * bd[ib];
                            gbm[ib] += gd[o] * ad[ia];
                        }
                    });
                }
                send(*a, ga, grads);
                send(*b, gb, grads);
            }
            Op::Scale(x, c) => send(*x, g.map(|v| v * c), grads),
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                send(*x, gx, grads);
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let plan = matmul_plan(av.shape(), bv.shape())?;
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                for &(o, ia, ib) in &plan.batches {
                    let gm = &gd[o * m * n..(o + 1) * m * n];
                    if self.ng(*a) {
                        let bm = &bd[ib * k * n..(ib + 1) * k * n];
                        gemm_abt_acc(
                            gm,
                            bm,
                            &mut ga.data_mut()[ia * m * k..(ia + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    if self.ng(*b) {
                        let am = &ad[ia * m * k..(ia + 1) * m * k];
                        gemm_atb_acc(
                            am,
                            gm,
                            &mut gb.data_mut()[ib * k * n..(ib + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
                send(*a, ga, grads);
                send(*b, gb, grads);
            }
            Op::Reshape(x) => send(*x, g.reshape(self.shape(*x))?, grads),
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(*x, kernels::permute(g, &inv)?, grads);
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, extent, inner) = split_axis(shape, *axis);
                let len = g.shape()[*axis];
                let mut gx = Tensor::zeros(shape);
                let gd = g.data();
                let gxd = gx.data_mut();
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    gxd[dst..dst + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, gx, grads);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let gd = g.data();
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.shape(v);
                    let ext = shape[*axis];
                    let mut part = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        part.extend_from_slice(&gd[base..base + ext * inner]);
                    }
                    offset += ext;
                    send(v, Tensor::new(shape.to_vec(), part)?, grads);
                }
            }
            Op::Sum(x) => send(*x, Tensor::full(self.shape(*x), g.item()), grads),
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x);
                let (outer, extent, inner) = split_axis(shape, *axis);
                let gd = g.data();
                let mut gx = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    for _ in 0..extent {
                        gx.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                send(*x, Tensor::new(shape.to_vec(), gx)?, grads);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = *y.shape().last().expect("non-empty shape");
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                send(*x, Tensor::new(y.shape().to_vec(), gx)?, grads);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let d = gv.len();
                let mut gx = Vec::with_capacity(xhat.len());
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for ((xr, gr), is) in xhat.chunks(d).zip(g.data().chunks(d)).zip(inv_std) {
                    let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    gx.extend(
                        dxhat
                            .iter()
                            .zip(xr)
                            .map(|(dh, xh)| is * (dh - mean_d - xh * mean_dx)),
                    );
                    for j in 0..d {
                        ggain[j] += gr[j] * xr[j];
                        gbias[j] += gr[j];
                    }
                }
                send(*x, Tensor::new(g.shape().to_vec(), gx)?, grads);
                send(
                    *gain,
                    Tensor::new(self.shape(*gain).to_vec(), ggain)?,
                    grads,
                );
                send(
                    *bias,
                    Tensor::new(self.shape(*bias).to_vec(), gbias)?,
                    grads,
                );
            }
            Op::Conv2d { x, kernel } => {
                let (gx, gk) =
                    kernels::conv2d_same_backward(self.value(*x), self.value(*kernel), g)?;
                send(*x, gx, grads);
                send(*kernel, gk, grads);
            }
            Op::SpectralAmplitude { x, freqs } => {
                let xv = self.value(*x);
                let (b, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let xd = xv.data();
                let gd = g.data();
                let mut gx = vec![0.0; xd.len()];
                for bi in 0..b {
                    for (i, &f) in freqs.iter().enumerate() {
                        let (re, im) = dft_bin(xd, bi, t, d, f);
                        let scale = gd[bi * freqs.len() + i] / d as f64;
                        for ti in 0..t {
                            let th = 2.0 * PI * ((f * ti) % t) as f64 / t as f64;
                            let (s, c) = th.sin_cos();
                            for j in 0..d {
                                let mag = (re[j] * re[j] + im[j] * im[j]).sqrt();
                                if mag > 1e-300 {
                                    gx[(bi * t + ti) * d + j] +=
                                        scale * (re[j] * c - im[j] * s) / mag;
                                }
                            }
                        }
                    }
                }
                send(*x, Tensor::new(xv.shape().to_vec(), gx)?, grads);
            }
        }
        Ok(())
    }
}

/// Real and imaginary parts of DFT bin `f` along time for every channel of sample `bi`.
fn dft_bin(xd: &[f64], bi: usize, t: usize, d: usize, f: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; d];
    let mut im = vec![0.0; d];
    for ti in 0..t {
        let th = 2.0 * PI * ((f * ti) % t) as f64 / t as f64;
        let (s, c) = th.sin_cos();
        let row = &xd[(bi * t + ti) * d..(bi * t + ti + 1) * d];
        for j in 0..d {
            re[j] += row[j] * c;
            im[j] -= row[j] * s;
        }
    }
    (re, im)
}
