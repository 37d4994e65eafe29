//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every op appends one node holding its output value. `backward` walks the
//! nodes in reverse execution order and adds each op's contribution into
//! the gradients of its inputs.

use crate::ops::{self, ConvGeom, Padding, PoolKind};
use crate::tensor::{invalid, Real, Shape, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    /// Exact form `x·Φ(x)`.
    Gelu,
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Activation,
    SpatialMean,
    SpatialVar,
    AdaptivePool,
    Hadamard,
    Concat,
    Add,
    Scale,
    Sum,
    CrossEntropy,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    SpatialMean {
        x: Var,
    },
    SpatialVar {
        x: Var,
        mean: Vec<f64>,
    },
    AdaptivePool {
        x: Var,
        kind: PoolKind,
        out: (usize, usize),
        argmax: Vec<usize>,
    },
    Hadamard {
        x: Var,
        y: Var,
        broadcast: bool,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: Var,
    },
    Sum {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Activation { .. } => OpKind::Activation,
            Op::SpatialMean { .. } => OpKind::SpatialMean,
            Op::SpatialVar { .. } => OpKind::SpatialVar,
            Op::AdaptivePool { .. } => OpKind::AdaptivePool,
            Op::Hadamard { .. } => OpKind::Hadamard,
            Op::Concat { .. } => OpKind::Concat,
            Op::Add { .. } => OpKind::Add,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sum { .. } => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    shapes: Vec<Shape>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, zeros when no gradient reached it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }

    pub fn slice(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize, contrib: impl FnOnce(&mut [T])) {
    let g = slot.get_or_insert_with(|| vec![T::zero(); len]);
    contrib(g);
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Test hook: backward through every op of `kind` reports gradients
    /// scaled by 1.5. Used as a negative control for the gradient checks.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Leaf that gradients flow into.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let geom = ConvGeom::new(
            self.shape(x),
            self.shape(weight),
            self.shape(bias),
            stride,
            padding,
        )?;
        let out = ops::conv2d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::new(geom.output, out)?;
        let rg = self.any_grad(&[x, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Per-sample affine map `y = x·W + b` on vector-shaped input.
    /// `weight` has shape `(1, 1, cin, cout)` and `bias` `(1, 1, 1, cout)`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if !xs.is_vector() {
            return Err(invalid("linear", format!("input {xs} is not vector-shaped")));
        }
        if ws.n != 1 || ws.h != 1 || ws.w != xs.c {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: xs,
                right: ws,
            });
        }
        self.conv2d(x, weight, bias, 1, Padding::Valid)
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let value = {
            let xv = self.value(x);
            match kind {
                Activation::Gelu => xv.map(|v| T::of(ops::gelu(v.f64()))),
                Activation::Relu => xv.map(|v| if v > T::zero() { v } else { T::zero() }),
                Activation::Sigmoid => xv.map(ops::sigmoid),
            }
        };
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Activation { x, kind }, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(Activation::Gelu, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    /// Per-channel spatial mean, shape `(n, 1, 1, c)`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if s.h * s.w == 0 {
            return Err(invalid("spatial_moments", format!("empty spatial extent in {s}")));
        }
        let mean = ops::spatial_mean(self.value(x).data(), s);
        let value = Tensor::new(
            Shape::vector(s.n, s.c),
            mean.into_iter().map(T::of).collect(),
        )?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SpatialMean { x }, rg))
    }

    /// Per-channel population variance (divisor h·w), shape `(n, 1, 1, c)`.
    pub fn spatial_var(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if s.h * s.w == 0 {
            return Err(invalid("spatial_moments", format!("empty spatial extent in {s}")));
        }
        let data = self.value(x).data();
        let mean = ops::spatial_mean(data, s);
        let var = ops::spatial_variance(data, s, &mean);
        let value = Tensor::new(
            Shape::vector(s.n, s.c),
            var.into_iter().map(T::of).collect(),
        )?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SpatialVar { x, mean }, rg))
    }

    /// Spatial mean and population variance of every channel.
    pub fn spatial_moments(&mut self, x: Var) -> Result<(Var, Var), TensorError> {
        Ok((self.spatial_mean(x)?, self.spatial_var(x)?))
    }

    pub fn adaptive_pool(
        &mut self,
        kind: PoolKind,
        x: Var,
        out: (usize, usize),
    ) -> Result<Var, TensorError> {
        let s = self.shape(x);
        let (oh, ow) = out;
        if oh == 0 || ow == 0 || oh > s.h || ow > s.w {
            return Err(invalid(
                "adaptive_pool",
                format!("output {oh}x{ow} must lie within 1x1..={}x{} of input {s}", s.h, s.w),
            ));
        }
        let (y, argmax) = ops::adaptive_pool_forward(self.value(x).data(), s, out, kind);
        let value = Tensor::new(Shape::new(s.n, oh, ow, s.c), y)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::AdaptivePool {
                x,
                kind,
                out,
                argmax,
            },
            rg,
        ))
    }

    /// Elementwise product. `y` is either the shape of `x` or a per-sample
    /// channel vector `(n, 1, 1, c)` broadcast over positions.
    pub fn hadamard(&mut self, x: Var, y: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        let ys = self.shape(y);
        let broadcast = if xs == ys {
            false
        } else if ys == Shape::vector(xs.n, xs.c) {
            true
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "hadamard",
                left: xs,
                right: ys,
            });
        };
        let xv = self.value(x).data();
        let yv = self.value(y).data();
        let out: Vec<T> = if broadcast {
            let hw = xs.h * xs.w;
            xv.iter()
                .enumerate()
                .map(|(i, &a)| {
                    let c = i % xs.c;
                    let n = i / (hw * xs.c);
                    a * yv[n * xs.c + c]
                })
                .collect()
        } else {
            xv.iter().zip(yv).map(|(&a, &b)| a * b).collect()
        };
        let value = Tensor::new(xs, out)?;
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(value, Op::Hadamard { x, y, broadcast }, rg))
    }

    /// Channel concatenation: `a` occupies channels `[0, ca)`, `b` the rest.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                left: sa,
                right: sb,
            });
        }
        let out_shape = sa.with_c(sa.c + sb.c);
        let mut out = Vec::with_capacity(out_shape.numel());
        let positions = sa.n * sa.h * sa.w;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for p in 0..positions {
            out.extend_from_slice(&av[p * sa.c..(p + 1) * sa.c]);
            out.extend_from_slice(&bv[p * sb.c..(p + 1) * sb.c]);
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: sa,
                right: sb,
            });
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let value = Tensor::new(sa, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Multiplies every element of `x` by the scalar held in `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let ss = self.shape(s);
        if !ss.is_scalar() {
            return Err(invalid("scale", format!("factor must be a scalar, got {ss}")));
        }
        let k = self.value(s).data()[0];
        let value = self.value(x).map(|v| v * k);
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(value, Op::Scale { x, s }, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::of(total)), Op::Sum { x }, rg)
    }

    /// Mean softmax cross-entropy of `logits` `(n, 1, 1, q)` against class
    /// indices, evaluated with a max shift in f64.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, TensorError> {
        let s = self.shape(logits);
        if !s.is_vector() || s.c == 0 {
            return Err(invalid(
                "softmax_cross_entropy",
                format!("logits must be (n,1,1,q) with q >= 1, got {s}"),
            ));
        }
        if labels.len() != s.n || s.n == 0 {
            return Err(invalid(
                "softmax_cross_entropy",
                format!("{} labels for a batch of {}", labels.len(), s.n),
            ));
        }
        let q = s.c;
        if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= q) {
            return Err(TensorError::LabelOutOfRange {
                sample,
                label,
                classes: q,
            });
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0f64; s.numel()];
        let mut total = 0.0f64;
        for (k, &label) in labels.iter().enumerate() {
            let row = &data[k * q..(k + 1) * q];
            let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let z: f64 = row.iter().map(|v| (v.f64() - m).exp()).sum();
            let lse = m + z.ln();
            for (p, v) in probs[k * q..(k + 1) * q].iter_mut().zip(row) {
                *p = (v.f64() - m).exp() / z;
            }
            total += lse - row[label].f64();
        }
        let value = Tensor::scalar(T::of(total / s.n as f64));
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, TensorError> {
        let shape = self.shape(output);
        if !shape.is_scalar() {
            return Err(TensorError::NotScalar(shape));
        }
        self.backward_with(output, Tensor::scalar(T::one()))
    }

    /// Backward pass seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>, TensorError> {
        if seed.shape() != self.shape(output) {
            return Err(TensorError::ShapeMismatch {
                op: "backward seed",
                left: self.shape(output),
                right: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.into_data());
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            if self.fault == Some(node.op.kind()) {
                let k = T::of(1.5);
                g.iter_mut().for_each(|v| *v *= k);
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            } => {
                if self.wants(*x) {
                    let dx = ops::conv2d_backward_input(self.value(*weight).data(), g, geom);
                    accumulate(&mut grads[x.0], dx.len(), |acc| add_into(acc, &dx));
                }
                if self.wants(*weight) {
                    let dw = ops::conv2d_backward_weight(self.value(*x).data(), g, geom);
                    accumulate(&mut grads[weight.0], dw.len(), |acc| add_into(acc, &dw));
                }
                if self.wants(*bias) {
                    let db = ops::conv2d_backward_bias(g, geom.output.c);
                    accumulate(&mut grads[bias.0], db.len(), |acc| add_into(acc, &db));
                }
            }
            Op::Activation { x, kind } => {
                if !self.wants(*x) {
                    return;
                }
                let xv = self.value(*x).data();
                let yv = node.value.data();
                accumulate(&mut grads[x.0], xv.len(), |acc| {
                    for (((a, &gv), &xi), &yi) in acc.iter_mut().zip(g).zip(xv).zip(yv) {
                        let d = match kind {
                            Activation::Gelu => T::of(ops::gelu_grad(xi.f64())),
                            Activation::Relu => {
                                if xi > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Sigmoid => yi * (T::one() - yi),
                        };
                        *a += gv * d;
                    }
                });
            }
            Op::SpatialMean { x } => {
                if !self.wants(*x) {
                    return;
                }
                let s = self.shape(*x);
                let inv = T::of(1.0 / (s.h * s.w) as f64);
                accumulate(&mut grads[x.0], s.numel(), |acc| {
                    for (i, a) in acc.iter_mut().enumerate() {
                        let c = i % s.c;
                        let n = i / (s.h * s.w * s.c);
                        *a += g[n * s.c + c] * inv;
                    }
                });
            }
            Op::SpatialVar { x, mean } => {
                if !self.wants(*x) {
                    return;
                }
                let s = self.shape(*x);
                let xv = self.value(*x).data();
                let k = 2.0 / (s.h * s.w) as f64;
                accumulate(&mut grads[x.0], s.numel(), |acc| {
                    for (i, a) in acc.iter_mut().enumerate() {
                        let c = i % s.c;
                        let n = i / (s.h * s.w * s.c);
                        let j = n * s.c + c;
                        *a += T::of(g[j].f64() * k * (xv[i].f64() - mean[j]));
                    }
                });
            }
            Op::AdaptivePool {
                x,
                kind,
                out,
                argmax,
            } => {
                if !self.wants(*x) {
                    return;
                }
                let s = self.shape(*x);
                match kind {
                    PoolKind::Avg => {
                        let dx = ops::adaptive_avg_pool_backward(g, s, *out);
                        accumulate(&mut grads[x.0], dx.len(), |acc| add_into(acc, &dx));
                    }
                    PoolKind::Max => accumulate(&mut grads[x.0], s.numel(), |acc| {
                        for (&src, &gv) in argmax.iter().zip(g) {
                            acc[src] += gv;
                        }
                    }),
                }
            }
            Op::Hadamard { x, y, broadcast } => {
                let xs = self.shape(*x);
                let xv = self.value(*x).data();
                let yv = self.value(*y).data();
                let hw = xs.h * xs.w;
                let y_at = |i: usize| {
                    if *broadcast {
                        (i / (hw * xs.c)) * xs.c + i % xs.c
                    } else {
                        i
                    }
                };
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], xv.len(), |acc| {
                        for (i, a) in acc.iter_mut().enumerate() {
                            *a += g[i] * yv[y_at(i)];
                        }
                    });
                }
                if self.wants(*y) {
                    if *broadcast {
                        let mut red = vec![0.0f64; yv.len()];
                        for i in 0..xv.len() {
                            red[y_at(i)] += (g[i] * xv[i]).f64();
                        }
                        accumulate(&mut grads[y.0], yv.len(), |acc| {
                            for (a, r) in acc.iter_mut().zip(red) {
                                *a += T::of(r);
                            }
                        });
                    } else {
                        accumulate(&mut grads[y.0], yv.len(), |acc| {
                            for ((a, &gv), &xi) in acc.iter_mut().zip(g).zip(xv) {
                                *a += gv * xi;
                            }
                        });
                    }
                }
            }
            Op::Concat { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let ct = sa.c + sb.c;
                if self.wants(*a) && sa.c > 0 {
                    accumulate(&mut grads[a.0], sa.numel(), |acc| {
                        for (p, dst) in acc.chunks_exact_mut(sa.c).enumerate() {
                            add_into(dst, &g[p * ct..p * ct + sa.c]);
                        }
                    });
                }
                if self.wants(*b) && sb.c > 0 {
                    accumulate(&mut grads[b.0], sb.numel(), |acc| {
                        for (p, dst) in acc.chunks_exact_mut(sb.c).enumerate() {
                            add_into(dst, &g[p * ct + sa.c..(p + 1) * ct]);
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], g.len(), |acc| add_into(acc, g));
                    }
                }
            }
            Op::Scale { x, s } => {
                let k = self.value(*s).data()[0];
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |acc| {
                        for (a, &gv) in acc.iter_mut().zip(g) {
                            *a += gv * k;
                        }
                    });
                }
                if self.wants(*s) {
                    let xv = self.value(*x).data();
                    let ds: f64 = g.iter().zip(xv).map(|(&gv, &xi)| (gv * xi).f64()).sum();
                    accumulate(&mut grads[s.0], 1, |acc| acc[0] += T::of(ds));
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    let n = self.shape(*x).numel();
                    accumulate(&mut grads[x.0], n, |acc| {
                        acc.iter_mut().for_each(|a| *a += g[0]);
                    });
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if !self.wants(*logits) {
                    return;
                }
                let s = self.shape(*logits);
                let scale = g[0].f64() / s.n as f64;
                accumulate(&mut grads[logits.0], s.numel(), |acc| {
                    for (k, &label) in labels.iter().enumerate() {
                        for c in 0..s.c {
                            let i = k * s.c + c;
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            acc[i] += T::of(scale * (probs[i] - onehot));
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(acc: &mut [T], src: &[T]) {
    for (a, &s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}
