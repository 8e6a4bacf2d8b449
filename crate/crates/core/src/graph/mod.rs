//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution
//! order, so the tape is topologically sorted by construction. [`Graph::backward`]
//! walks it once in reverse. A graph is built per forward pass and dropped
//! after the optimizer step.

mod conv;
mod resize;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Tanh(Var),
    Sigmoid(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Resize(Var),
    Concat(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    ChannelMean(Var),
    ChannelStd(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        input: Var,
        factor: T,
    },
    Shift(Var),
    ReflectPad(Var),
    Crop(Var),
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    BceWithLogits {
        logits: Var,
        targets: Tensor<T>,
    },
    SmoothL1 {
        input: Var,
        beta: T,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// The recorded forward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `var`; zeros when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0]))
    }

    /// True if backpropagation reached `var`.
    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

/// Index of the element of `b` that broadcasts onto position `i` of `a`.
struct Broadcast {
    a: Shape,
    b_strides: [usize; 4],
}

impl Broadcast {
    fn new(a: Shape, b: Shape) -> Self {
        let s = b.strides();
        let mut b_strides = [0; 4];
        for d in 0..4 {
            b_strides[d] = if b.0[d] == 1 { 0 } else { s[d] };
        }
        Broadcast { a, b_strides }
    }

    /// Calls `f(a_index, b_index)` for every element of `a` in order.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let [n, c, h, w] = self.a.0;
        let [sn, sc, sh, sw] = self.b_strides;
        let mut i = 0;
        for bn in 0..n {
            for bc in 0..c {
                let base = bn * sn + bc * sc;
                for y in 0..h {
                    let row = base + y * sh;
                    for x in 0..w {
                        f(i, row + x * sw);
                        i += 1;
                    }
                }
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    /// Records a value that is never differentiated (images, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn unary(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(input).map(f);
        let rg = self.requires_grad(input);
        self.push(value, op, rg)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let value = conv::forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// `x` for `x >= 0`, `slope · x` otherwise. The derivative at 0 is taken as 1.
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        self.unary(input, Op::LeakyRelu { input, slope }, move |x| {
            if x >= T::zero() {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, Op::Tanh(input), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Op::Sigmoid(input), sigmoid)
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        self.unary(input, Op::Scale { input, factor }, move |x| x * factor)
    }

    pub fn shift(&mut self, input: Var, offset: T) -> Var {
        self.unary(input, Op::Shift(input), move |x| x + offset)
    }

    pub fn clamp(&mut self, input: Var, lo: T, hi: T) -> Var {
        self.unary(input, Op::Clamp { input, lo, hi }, move |x| {
            x.max(lo).min(hi)
        })
    }

    /// Huber-style smooth L1 with transition point `beta`.
    pub fn smooth_l1(&mut self, input: Var, beta: T) -> Var {
        let half = T::lit(0.5);
        self.unary(input, Op::SmoothL1 { input, beta }, move |x| {
            let a = x.abs();
            if a < beta {
                half * a * a / beta
            } else {
                a - half * beta
            }
        })
    }

    /// Elementwise binary cross-entropy of `sigmoid(logits)` against constant targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != targets.shape() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: x.shape(),
                rhs: targets.shape(),
            });
        }
        let data = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln())
            .collect();
        let value = Tensor::from_vec(x.shape(), data)?;
        let rg = self.requires_grad(logits);
        Ok(self.push(value, Op::BceWithLogits { logits, targets }, rg))
    }

    /// Numerically stable softmax along `axis` (0..4).
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        if axis >= 4 {
            return Err(Error::InvalidArgument(format!(
                "softmax axis {axis} out of range"
            )));
        }
        let x = self.value(input);
        let shape = x.shape();
        let mut out = Tensor::zeros(shape);
        for_each_lane(shape, axis, |idx| {
            let m = idx
                .clone()
                .map(|i| x.data()[i])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for i in idx.clone() {
                let e = (x.data()[i] - m).exp();
                out.data_mut()[i] = e;
                total += e;
            }
            for i in idx {
                out.data_mut()[i] = out.data()[i] / total;
            }
        });
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::Softmax { input, axis }, rg))
    }

    /// Bilinear resampling with half-pixel centers (align-corners off).
    pub fn resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "resize target {out_h}x{out_w} must be at least 1x1"
            )));
        }
        let value = resize::bilinear(self.value(input), out_h, out_w);
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Resize(input), rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.concat(&[a, b])
    }

    /// Channel-wise concatenation of any number of tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let base = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.n() != base.n() || s.h() != base.h() || s.w() != base.w() {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: base,
                    rhs: s,
                });
            }
            channels += s.c();
        }
        let shape = Shape::new(base.n(), channels, base.h(), base.w());
        let plane = base.plane();
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..base.n() {
            for &p in parts {
                let v = self.value(p);
                let len = v.shape().c() * plane;
                data.extend_from_slice(&v.data()[b * len..(b + 1) * len]);
            }
        }
        let value = Tensor::from_vec(shape, data)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(input).slice_channels(start, len)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::SliceChannels { input, start }, rg))
    }

    /// Per-(batch, channel) spatial mean, shape `(n, c, 1, 1)`.
    pub fn channel_mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let [n, c, _, _] = x.shape().0;
        let plane = x.shape().plane();
        let inv = T::one() / T::lit(plane as f64);
        let data = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(Shape::new(n, c, 1, 1), data).expect("shape by construction");
        let rg = self.requires_grad(input);
        self.push(value, Op::ChannelMean(input), rg)
    }

    /// Per-(batch, channel) population standard deviation `sqrt(var + eps)`.
    pub fn channel_std(&mut self, input: Var, eps: T) -> Var {
        let x = self.value(input);
        let [n, c, _, _] = x.shape().0;
        let plane = x.shape().plane();
        let inv = T::one() / T::lit(plane as f64);
        let data = x
            .data()
            .chunks(plane)
            .map(|p| {
                let mean = p.iter().copied().sum::<T>() * inv;
                let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
                (var + eps).sqrt()
            })
            .collect();
        let value = Tensor::from_vec(Shape::new(n, c, 1, 1), data).expect("shape by construction");
        let rg = self.requires_grad(input);
        self.push(value, Op::ChannelStd(input), rg)
    }

    /// Channel means and standard deviations in one call.
    pub fn channel_stats(&mut self, input: Var, eps: T) -> (Var, Var) {
        (self.channel_mean(input), self.channel_std(input, eps))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !sa.accepts_broadcast(&sb) {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: sa,
                rhs: sb,
            });
        }
        let mut out = Tensor::zeros(sa);
        {
            let (xa, xb) = (self.value(a).data(), self.value(b).data());
            let dst = out.data_mut();
            Broadcast::new(sa, sb).for_each(|i, j| dst[i] = f(xa[i], xb[j]));
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, op, rg))
    }

    /// `a + b`, with `b` broadcast over any of its size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Reflect-pads the bottom and right edges up to `out_h × out_w`.
    pub fn reflect_pad(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(input);
        if out_h < s.h() || out_w < s.w() || out_h - s.h() >= s.h() || out_w - s.w() >= s.w() {
            return Err(Error::InvalidArgument(format!(
                "cannot reflect-pad {s} to {out_h}x{out_w}"
            )));
        }
        let value = resize::reflect_pad(self.value(input), out_h, out_w);
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::ReflectPad(input), rg))
    }

    /// Keeps the top-left `h × w` window.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(input);
        if h > s.h() || w > s.w() {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {s} to {h}x{w}"
            )));
        }
        let x = self.value(input);
        let value = Tensor::from_fn(Shape::new(s.n(), s.c(), h, w), |b, c, y, xx| {
            x.at(b, c, y, xx)
        });
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Crop(input), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.requires_grad(input);
        self.push(value, Op::Sum(input), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.requires_grad(loss) {
            grads[loss.0] = Some(Tensor::full(loss_shape, T::one()));
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Elementwise chain rule: `dx = g · f'(x, y)` where `y` is the node output.
    fn pointwise(
        &self,
        grads: &mut [Option<Tensor<T>>],
        input: Var,
        out: &Tensor<T>,
        g: &Tensor<T>,
        d: impl Fn(T, T) -> T,
    ) {
        if !self.requires_grad(input) {
            return;
        }
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&x, &y), &g)| g * d(x, y))
            .collect();
        let t = Tensor::from_vec(x.shape(), data).expect("same shape");
        self.accumulate(grads, input, t);
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let out = &node.value;
        let one = T::one();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let need = (
                    self.requires_grad(input),
                    self.requires_grad(weight),
                    bias.is_some_and(|b| self.requires_grad(b)),
                );
                let cg =
                    conv::backward(self.value(input), self.value(weight), g, stride, pad, need)?;
                if let Some(dx) = cg.input {
                    self.accumulate(grads, input, dx);
                }
                if let Some(dw) = cg.weight {
                    self.accumulate(grads, weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, cg.bias) {
                    let db = Tensor::from_vec(self.shape(b), db.into_data())?;
                    self.accumulate(grads, b, db);
                }
            }
            &Op::LeakyRelu { input, slope } => {
                self.pointwise(grads, input, out, g, |x, _| {
                    if x >= T::zero() {
                        one
                    } else {
                        slope
                    }
                });
            }
            &Op::Tanh(input) => self.pointwise(grads, input, out, g, |_, y| one - y * y),
            &Op::Sigmoid(input) => self.pointwise(grads, input, out, g, |_, y| y * (one - y)),
            &Op::Scale { input, factor } => self.pointwise(grads, input, out, g, |_, _| factor),
            &Op::Shift(input) => self.pointwise(grads, input, out, g, |_, _| one),
            &Op::Clamp { input, lo, hi } => self.pointwise(grads, input, out, g, |x, _| {
                if x >= lo && x <= hi {
                    one
                } else {
                    T::zero()
                }
            }),
            &Op::SmoothL1 { input, beta } => self.pointwise(grads, input, out, g, |x, _| {
                if x.abs() < beta {
                    x / beta
                } else {
                    x.signum()
                }
            }),
            Op::BceWithLogits { logits, targets } => {
                if self.requires_grad(*logits) {
                    let x = self.value(*logits);
                    let data = x
                        .data()
                        .iter()
                        .zip(targets.data())
                        .zip(g.data())
                        .map(|((&x, &t), &g)| g * (sigmoid(x) - t))
                        .collect();
                    self.accumulate(grads, *logits, Tensor::from_vec(x.shape(), data)?);
                }
            }
            &Op::Softmax { input, axis } => {
                if self.requires_grad(input) {
                    let mut dx = Tensor::zeros(out.shape());
                    for_each_lane(out.shape(), axis, |idx| {
                        let dot: T = idx.clone().map(|i| g.data()[i] * out.data()[i]).sum();
                        for i in idx {
                            dx.data_mut()[i] = out.data()[i] * (g.data()[i] - dot);
                        }
                    });
                    self.accumulate(grads, input, dx);
                }
            }
            &Op::Resize(input) => {
                if self.requires_grad(input) {
                    let dx = resize::bilinear_backward(g, self.shape(input));
                    self.accumulate(grads, input, dx);
                }
            }
            &Op::ReflectPad(input) => {
                if self.requires_grad(input) {
                    let dx = resize::reflect_pad_backward(g, self.shape(input));
                    self.accumulate(grads, input, dx);
                }
            }
            &Op::Crop(input) => {
                if self.requires_grad(input) {
                    let mut dx = Tensor::zeros(self.shape(input));
                    let [n, c, h, w] = g.shape().0;
                    for b in 0..n {
                        for ch in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    dx.set(b, ch, y, x, g.at(b, ch, y, x));
                                }
                            }
                        }
                    }
                    self.accumulate(grads, input, dx);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).c();
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, g.slice_channels(offset, c)?);
                    }
                    offset += c;
                }
            }
            &Op::SliceChannels { input, start } => {
                if self.requires_grad(input) {
                    let s = self.shape(input);
                    let len = out.shape().c();
                    let plane = s.plane();
                    let mut dx = Tensor::zeros(s);
                    for b in 0..s.n() {
                        let src = &g.data()[b * len * plane..(b + 1) * len * plane];
                        let base = (b * s.c() + start) * plane;
                        dx.data_mut()[base..base + len * plane].copy_from_slice(src);
                    }
                    self.accumulate(grads, input, dx);
                }
            }
            &Op::ChannelMean(input) => {
                if self.requires_grad(input) {
                    let s = self.shape(input);
                    let plane = s.plane();
                    let inv = one / T::lit(plane as f64);
                    let mut dx = Tensor::zeros(s);
                    for (lane, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
                        chunk.fill(g.data()[lane] * inv);
                    }
                    self.accumulate(grads, input, dx);
                }
            }
            &Op::ChannelStd(input) => {
                if self.requires_grad(input) {
                    // d std / d x_j = (x_j - mean) / (N · std); zero where std == 0.
                    let x = self.value(input);
                    let plane = x.shape().plane();
                    let n = T::lit(plane as f64);
                    let mut dx = Tensor::zeros(x.shape());
                    for (lane, (src, dst)) in x
                        .data()
                        .chunks(plane)
                        .zip(dx.data_mut().chunks_mut(plane))
                        .enumerate()
                    {
                        let sd = out.data()[lane];
                        if sd == T::zero() {
                            continue;
                        }
                        let mean = src.iter().copied().sum::<T>() / n;
                        let k = g.data()[lane] / (n * sd);
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = k * (v - mean);
                        }
                    }
                    self.accumulate(grads, input, dx);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                if self.requires_grad(b) {
                    let db = reduce_to(g, self.shape(b), |gi, _| gi);
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                if self.requires_grad(b) {
                    let db = reduce_to(g, self.shape(b), |gi, _| -gi);
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let bc = Broadcast::new(va.shape(), vb.shape());
                if self.requires_grad(a) {
                    let mut da = Tensor::zeros(va.shape());
                    {
                        let d = da.data_mut();
                        bc.for_each(|i, j| d[i] = g.data()[i] * vb.data()[j]);
                    }
                    self.accumulate(grads, a, da);
                }
                if self.requires_grad(b) {
                    let mut db = Tensor::zeros(vb.shape());
                    {
                        let d = db.data_mut();
                        bc.for_each(|i, j| d[j] += g.data()[i] * va.data()[i]);
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Sum(input) => {
                if self.requires_grad(input) {
                    let dx = Tensor::full(self.shape(input), g.data()[0]);
                    self.accumulate(grads, input, dx);
                }
            }
        }
        Ok(())
    }
}

/// Sums `g` (shape of the broadcast output) down to `target`.
fn reduce_to<T: Real>(g: &Tensor<T>, target: Shape, f: impl Fn(T, usize) -> T) -> Tensor<T> {
    if g.shape() == target {
        return g.map(|v| f(v, 0));
    }
    let mut out = Tensor::zeros(target);
    let d = out.data_mut();
    Broadcast::new(g.shape(), target).for_each(|i, j| d[j] += f(g.data()[i], i));
    out
}

/// Calls `f` with the flat indices of every 1-D lane along `axis`.
fn for_each_lane(
    shape: Shape,
    axis: usize,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    let dims = shape.0;
    let strides = shape.strides();
    let len = dims[axis];
    let stride = strides[axis];
    let mut others = [0usize; 3];
    let mut k = 0;
    for d in 0..4 {
        if d != axis {
            others[k] = d;
            k += 1;
        }
    }
    for i0 in 0..dims[others[0]] {
        for i1 in 0..dims[others[1]] {
            for i2 in 0..dims[others[2]] {
                let start =
                    i0 * strides[others[0]] + i1 * strides[others[1]] + i2 * strides[others[2]];
                f((start..start + len * stride).step_by(stride));
            }
        }
    }
}

#[cfg(test)]
mod tests;
