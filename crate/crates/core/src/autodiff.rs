//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! the leaves (inputs and bound parameters).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_valid, conv2d_valid_grad_input, conv2d_valid_grad_kernel, ensure_same_dims, pad2d, pad2d_adjoint, Dims, Pad2d,
    PadMode, ParamStore, Scalar, Tensor,
};
use crate::wavelet::{wt_forward_packed, wt_inverse_packed};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Conv { x: Var, w: Var, stride: usize, groups: usize },
    Pad { x: Var, pad: Pad2d, mode: PadMode },
    Crop { x: Var, top: usize, left: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Expand(Var),
    Shuffle { x: Var, groups: usize },
    Gap(Var),
    ChannelMean(Var),
    ChannelMax { x: Var, argmax: Vec<u32> },
    UpNearest(Var),
    UpBilinear(Var),
    WtForward(Var),
    WtInverse(Var),
    MeanAbsError { x: Var, target: Tensor<T> },
    MeanSqError { x: Var, target: Tensor<T> },
    Weighted { a: Var, b: Var, wa: T, wb: T },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a named parameter from `store` (once per graph).
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.push(store.get(name)?.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    pub fn take_value(&self, v: Var) -> Tensor<T> {
        self.nodes[v.0].value.clone()
    }

    /// Bound parameters in name order.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    // ---- structural ops -------------------------------------------------

    pub fn conv_valid(&mut self, x: Var, w: Var, stride: usize, groups: usize) -> Result<Var> {
        let value = conv2d_valid(self.value(x), self.value(w), stride, groups)?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::Conv { x, w, stride, groups }, ng))
    }

    /// Padded convolution, recorded as a pad followed by a valid correlation.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize, mode: PadMode, groups: usize) -> Result<Var> {
        let xp = if padding > 0 {
            self.pad(x, Pad2d::uniform(padding), mode)
        } else {
            x
        };
        self.conv_valid(xp, w, stride, groups).map_err(|e| match e {
            Error::Shape(_) => Error::Shape(format!(
                "conv2d: input {:?} incompatible with kernel {:?} (stride {stride}, padding {padding}, groups {groups})",
                self.dims(x),
                self.dims(w)
            )),
            other => other,
        })
    }

    pub fn pad(&mut self, x: Var, pad: Pad2d, mode: PadMode) -> Var {
        if pad.is_zero() {
            return x;
        }
        let value = pad2d(self.value(x), pad, mode);
        let ng = self.needs(x);
        self.push(value, Op::Pad { x, pad, mode }, ng)
    }

    /// Spatial window `[top, top+h) × [left, left+w)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let src = self.value(x);
        let [n, c, sh, sw] = src.dims();
        if top + h > sh || left + w > sw {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {:?}",
                src.dims()
            )));
        }
        if (top, left, h, w) == (0, 0, sh, sw) {
            return Ok(x);
        }
        let value = Tensor::from_fn([n, c, h, w], |ni, ci, y, xx| src.at(ni, ci, y + top, xx + left));
        let ng = self.needs(x);
        Ok(self.push(value, Op::Crop { x, top, left }, ng))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_channels(&tensors)?;
        let ng = parts.iter().any(|&v| self.needs(v));
        Ok(self.push(value, Op::Concat(parts.to_vec()), ng))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, len)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Slice { x, start }, ng))
    }

    /// Broadcast `x` to `dims` (size-1 axes repeat).
    pub fn expand(&mut self, x: Var, dims: Dims) -> Result<Var> {
        let src = self.value(x);
        let sd = src.dims();
        if broadcast_dims(sd, dims)? != dims {
            return Err(Error::Shape(format!("cannot expand {sd:?} to {dims:?}")));
        }
        let zero = Tensor::zeros(dims);
        let value = broadcast_binary(&zero, src, dims, |_, b| b);
        let ng = self.needs(x);
        Ok(self.push(value, Op::Expand(x), ng))
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let src = self.value(x);
        let perm = shuffle_perm(src.c(), groups)?;
        let mut value = Tensor::zeros(src.dims());
        for n in 0..src.n() {
            for (o, &s) in perm.iter().enumerate() {
                value.plane_mut(n, o).copy_from_slice(src.plane(n, s));
            }
        }
        let ng = self.needs(x);
        Ok(self.push(value, Op::Shuffle { x, groups }, ng))
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = broadcast_dims(self.dims(a), self.dims(b))?;
        let value = broadcast_binary(self.value(a), self.value(b), dims, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = broadcast_dims(self.dims(a), self.dims(b))?;
        let value = broadcast_binary(self.value(a), self.value(b), dims, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = broadcast_dims(self.dims(a), self.dims(b))?;
        let value = broadcast_binary(self.value(a), self.value(b), dims, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::of(scale), T::of(shift));
        let value = self.value(x).map(|v| s * v + b);
        let ng = self.needs(x);
        self.push(value, Op::Affine { x, scale: s }, ng)
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng)
    }

    // ---- pooling ------------------------------------------------------

    /// Global average pool to (N, C, 1, 1).
    pub fn gap(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let [n, c, h, w] = src.dims();
        let inv = 1.0 / (h * w) as f64;
        let value = Tensor::from_fn([n, c, 1, 1], |ni, ci, _, _| {
            T::of(src.plane(ni, ci).iter().fold(0.0, |a, &v| a + v.f64()) * inv)
        });
        let ng = self.needs(x);
        self.push(value, Op::Gap(x), ng)
    }

    /// Mean over channels to (N, 1, H, W).
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let [n, c, h, w] = src.dims();
        let inv = T::of(1.0 / c as f64);
        let mut value = Tensor::zeros([n, 1, h, w]);
        for ni in 0..n {
            let dst = value.plane_mut(ni, 0);
            for ci in 0..c {
                for (d, &s) in dst.iter_mut().zip(src.plane(ni, ci)) {
                    *d = *d + s;
                }
            }
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let ng = self.needs(x);
        self.push(value, Op::ChannelMean(x), ng)
    }

    /// Max over channels to (N, 1, H, W); ties resolve to the lowest channel.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let [n, c, h, w] = src.dims();
        let mut value = Tensor::full([n, 1, h, w], T::neg_infinity());
        let mut argmax = vec![0u32; n * h * w];
        for ni in 0..n {
            let dst = value.plane_mut(ni, 0);
            let am = &mut argmax[ni * h * w..(ni + 1) * h * w];
            for ci in 0..c {
                for ((d, a), &s) in dst.iter_mut().zip(am.iter_mut()).zip(src.plane(ni, ci)) {
                    if s > *d {
                        *d = s;
                        *a = ci as u32;
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::ChannelMax { x, argmax }, ng)
    }

    // ---- resampling -----------------------------------------------------

    pub fn upsample_nearest(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let [n, c, h, w] = src.dims();
        let value = Tensor::from_fn([n, c, 2 * h, 2 * w], |ni, ci, y, xx| src.at(ni, ci, y / 2, xx / 2));
        let ng = self.needs(x);
        self.push(value, Op::UpNearest(x), ng)
    }

    /// ×2 bilinear upsampling with half-pixel centres and edge clamping.
    pub fn upsample_bilinear(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let value = bilinear_up(src);
        let ng = self.needs(x);
        self.push(value, Op::UpBilinear(x), ng)
    }

    pub fn wt_forward(&mut self, x: Var) -> Result<Var> {
        let value = wt_forward_packed(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::WtForward(x), ng))
    }

    pub fn wt_inverse(&mut self, x: Var) -> Result<Var> {
        let value = wt_inverse_packed(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::WtInverse(x), ng))
    }

    // ---- losses -------------------------------------------------------

    /// Mean absolute error against a fixed target; scalar output.
    pub fn mean_abs_error(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let src = self.value(x);
        ensure_same_dims("mean_abs_error", src.dims(), target.dims())?;
        let s = src
            .data()
            .iter()
            .zip(target.data())
            .fold(0.0, |a, (&p, &t)| a + (p.f64() - t.f64()).abs());
        let value = Tensor::scalar(T::of(s / src.len() as f64));
        let ng = self.needs(x);
        Ok(self.push(
            value,
            Op::MeanAbsError {
                x,
                target: target.clone(),
            },
            ng,
        ))
    }

    /// Mean squared error against a fixed target; scalar output.
    pub fn mean_sq_error(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let src = self.value(x);
        ensure_same_dims("mean_sq_error", src.dims(), target.dims())?;
        let s = src.data().iter().zip(target.data()).fold(0.0, |a, (&p, &t)| {
            let d = p.f64() - t.f64();
            a + d * d
        });
        let value = Tensor::scalar(T::of(s / src.len() as f64));
        let ng = self.needs(x);
        Ok(self.push(
            value,
            Op::MeanSqError {
                x,
                target: target.clone(),
            },
            ng,
        ))
    }

    /// `wa * a + wb * b` for equally shaped operands.
    pub fn weighted(&mut self, a: Var, wa: f64, b: Var, wb: f64) -> Result<Var> {
        let (ta, tb) = (T::of(wa), T::of(wb));
        let value = self.value(a).zip_map(self.value(b), |x, y| ta * x + tb * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Weighted { a, b, wa: ta, wb: tb }, ng))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Backpropagates `seed` (dL/d`out`) and returns gradients of every
    /// differentiable leaf.
    pub fn backward(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        ensure_same_dims("backward seed", self.dims(out), seed.dims())?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            for (v, contrib) in self.local_grads(node, &g)? {
                if !self.needs(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&self, out: Var) -> Result<Gradients<T>> {
        let dims = self.dims(out);
        self.backward(out, Tensor::full(dims, T::one()))
    }

    /// Adds gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (name, v) in &self.params {
            if let Some(g) = grads.get(*v) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Conv { x, w, stride, groups } => {
                let mut r = Vec::with_capacity(2);
                if self.needs(*x) {
                    r.push((*x, conv2d_valid_grad_input(g, val(*w), self.dims(*x), *stride, *groups)));
                }
                if self.needs(*w) {
                    r.push((*w, conv2d_valid_grad_kernel(g, val(*x), self.dims(*w), *stride, *groups)));
                }
                r
            }
            Op::Pad { x, pad, mode } => {
                let [_, _, h, w] = self.dims(*x);
                vec![(*x, pad2d_adjoint(g, h, w, *pad, *mode))]
            }
            Op::Crop { x, top, left } => {
                let mut gx = Tensor::zeros(self.dims(*x));
                let [n, c, h, w] = g.dims();
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx.set(ni, ci, y + top, xx + left, g.at(ni, ci, y, xx));
                            }
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Add(a, b) => vec![(*a, reduce_to(g, self.dims(*a))), (*b, reduce_to(g, self.dims(*b)))],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(g, self.dims(*a))),
                (*b, reduce_to(&g.map(|v| -v), self.dims(*b))),
            ],
            Op::Mul(a, b) => {
                let d = g.dims();
                let ga = broadcast_binary(g, val(*b), d, |x, y| x * y);
                let gb = broadcast_binary(g, val(*a), d, |x, y| x * y);
                vec![(*a, reduce_to(&ga, self.dims(*a))), (*b, reduce_to(&gb, self.dims(*b)))]
            }
            Op::Affine { x, scale } => vec![(*x, g.scale(*scale))],
            Op::Sigmoid(x) => {
                let y = &node.value;
                vec![(*x, g.zip_map(y, |gv, s| gv * s * (T::one() - s))?)]
            }
            Op::Relu(x) => vec![(*x, g.zip_map(val(*x), |gv, v| if v > T::zero() { gv } else { T::zero() })?)],
            Op::Concat(parts) => {
                let mut start = 0;
                let mut r = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = self.dims(p)[1];
                    r.push((p, g.slice_channels(start, c)?));
                    start += c;
                }
                r
            }
            Op::Slice { x, start } => {
                let mut gx = Tensor::zeros(self.dims(*x));
                for n in 0..g.n() {
                    for c in 0..g.c() {
                        gx.plane_mut(n, start + c).copy_from_slice(g.plane(n, c));
                    }
                }
                vec![(*x, gx)]
            }
            Op::Expand(x) => vec![(*x, reduce_to(g, self.dims(*x)))],
            Op::Shuffle { x, groups } => {
                let perm = shuffle_perm(g.c(), *groups)?;
                let mut gx = Tensor::zeros(g.dims());
                for n in 0..g.n() {
                    for (o, &s) in perm.iter().enumerate() {
                        gx.plane_mut(n, s).copy_from_slice(g.plane(n, o));
                    }
                }
                vec![(*x, gx)]
            }
            Op::Gap(x) => {
                let [_, _, h, w] = self.dims(*x);
                let inv = T::of(1.0 / (h * w) as f64);
                let d = self.dims(*x);
                vec![(*x, Tensor::from_fn(d, |n, c, _, _| g.at(n, c, 0, 0) * inv))]
            }
            Op::ChannelMean(x) => {
                let d = self.dims(*x);
                let inv = T::of(1.0 / d[1] as f64);
                vec![(*x, Tensor::from_fn(d, |n, _, h, w| g.at(n, 0, h, w) * inv))]
            }
            Op::ChannelMax { x, argmax } => {
                let d = self.dims(*x);
                let [n, _, h, w] = d;
                let mut gx = Tensor::zeros(d);
                for ni in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let c = argmax[(ni * h + y) * w + xx] as usize;
                            gx.set(ni, c, y, xx, g.at(ni, 0, y, xx));
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::UpNearest(x) => {
                let d = self.dims(*x);
                let mut gx = Tensor::zeros(d);
                let [n, c, h, w] = g.dims();
                for ni in 0..n {
                    for ci in 0..c {
                        let src = g.plane(ni, ci);
                        let dst = gx.plane_mut(ni, ci);
                        for y in 0..h {
                            for xx in 0..w {
                                let o = (y / 2) * d[3] + xx / 2;
                                dst[o] = dst[o] + src[y * w + xx];
                            }
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::UpBilinear(x) => vec![(*x, bilinear_up_adjoint(g, self.dims(*x)))],
            // Orthonormal: the adjoint of analysis is synthesis and vice versa.
            Op::WtForward(x) => vec![(*x, wt_inverse_packed(g)?)],
            Op::WtInverse(x) => vec![(*x, wt_forward_packed(g)?)],
            Op::MeanAbsError { x, target } => {
                let gs = g.data()[0];
                let inv = T::of(1.0 / target.len() as f64);
                let gx = val(*x).zip_map(target, |p, t| {
                    let d = p - t;
                    let s = if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    gs * s * inv
                })?;
                vec![(*x, gx)]
            }
            Op::MeanSqError { x, target } => {
                let gs = g.data()[0];
                let k = T::of(2.0 / target.len() as f64);
                vec![(*x, val(*x).zip_map(target, |p, t| gs * k * (p - t))?)]
            }
            Op::Weighted { a, b, wa, wb } => vec![(*a, g.scale(*wa)), (*b, g.scale(*wb))],
        };
        Ok(out)
    }
}

/// Logistic function. Saturated results are pulled back to the nearest
/// representable values inside (0, 1), so gates and heads never emit an
/// exact 0 or 1.
#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    let y = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let half_eps = T::epsilon() / T::of(2.0);
    y.max(T::min_positive_value()).min(T::one() - half_eps)
}

/// Source channel for each output channel of a `groups`-way shuffle:
/// view channels as (groups, C/groups), transpose, flatten.
pub fn shuffle_perm(c: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!(
            "channel shuffle: {c} channels not divisible into {groups} groups"
        )));
    }
    let per = c / groups;
    let mut perm = vec![0; c];
    for g in 0..groups {
        for i in 0..per {
            perm[i * groups + g] = g * per + i;
        }
    }
    Ok(perm)
}

pub fn broadcast_dims(a: Dims, b: Dims) -> Result<Dims> {
    let mut out = [0; 4];
    for k in 0..4 {
        out[k] = match (a[k], b[k]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

fn bstrides(d: Dims) -> [usize; 4] {
    let s = [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1];
    let mut e = [0; 4];
    for k in 0..4 {
        e[k] = if d[k] == 1 { 0 } else { s[k] };
    }
    e
}

fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: Dims, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (sa, sb) = (bstrides(a.dims()), bstrides(b.dims()));
    let (da, db) = (a.data(), b.data());
    let mut data = Vec::with_capacity(out.iter().product());
    for n in 0..out[0] {
        for c in 0..out[1] {
            for h in 0..out[2] {
                let ba = n * sa[0] + c * sa[1] + h * sa[2];
                let bb = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out[3] {
                    data.push(f(da[ba + w * sa[3]], db[bb + w * sb[3]]));
                }
            }
        }
    }
    Tensor::new(out, data).expect("broadcast size")
}

/// Sums `g` over the axes where `dims` is 1 (adjoint of broadcasting).
fn reduce_to<T: Scalar>(g: &Tensor<T>, dims: Dims) -> Tensor<T> {
    if g.dims() == dims {
        return g.clone();
    }
    let s = bstrides(dims);
    let gd = g.dims();
    let mut out = Tensor::zeros(dims);
    let od = out.data_mut();
    let src = g.data();
    let mut i = 0;
    for n in 0..gd[0] {
        for c in 0..gd[1] {
            for h in 0..gd[2] {
                let base = n * s[0] + c * s[1] + h * s[2];
                for w in 0..gd[3] {
                    let o = base + w * s[3];
                    od[o] = od[o] + src[i];
                    i += 1;
                }
            }
        }
    }
    out
}

/// Two-tap weights for ×2 linear upsampling of a length-`len` axis.
fn linear_taps(len: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let t = src - i0 as f64;
            [(i0, 1.0 - t), (i1, t)]
        })
        .collect()
}

pub(crate) fn bilinear_up<T: Scalar>(src: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = src.dims();
    let (ty, tx) = (linear_taps(h), linear_taps(w));
    Tensor::from_fn([n, c, 2 * h, 2 * w], |ni, ci, y, x| {
        let p = src.plane(ni, ci);
        let mut acc = 0.0;
        for &(iy, wy) in &ty[y] {
            for &(ix, wx) in &tx[x] {
                acc += wy * wx * p[iy * w + ix].f64();
            }
        }
        T::of(acc)
    })
}

fn bilinear_up_adjoint<T: Scalar>(g: &Tensor<T>, src_dims: Dims) -> Tensor<T> {
    let [n, c, h, w] = src_dims;
    let (ty, tx) = (linear_taps(h), linear_taps(w));
    let mut out = Tensor::zeros(src_dims);
    for ni in 0..n {
        for ci in 0..c {
            let gp = g.plane(ni, ci).to_vec();
            let dst = out.plane_mut(ni, ci);
            for (y, tyy) in ty.iter().enumerate() {
                for (x, txx) in tx.iter().enumerate() {
                    let gv = gp[y * 2 * w + x].f64();
                    for &(iy, wy) in tyy {
                        for &(ix, wx) in txx {
                            let d = &mut dst[iy * w + ix];
                            *d = *d + T::of(wy * wx * gv);
                        }
                    }
                }
            }
        }
    }
    out
}
