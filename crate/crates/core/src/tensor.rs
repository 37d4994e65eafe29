//! Dense rank-4 tensors in (batch, height, width, channel) layout.
//!
//! Vectors are stored as `(n, 1, 1, c)` and scalars as `(1, 1, 1, 1)`.
//! Storage is row-major with the channel index fastest.

use std::fmt;
use std::ops::Range;

use num_traits::Float;
use thiserror::Error;

/// Element type of a tensor. Production code runs on `f32`; the gradient
/// oracles can replay the same graphs on `f64`.
pub trait Real:
    Float
    + Default
    + fmt::Debug
    + fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn vector(n: usize, c: usize) -> Self {
        Shape::new(n, 1, 1, c)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_vector(&self) -> bool {
        self.h == 1 && self.w == 1
    }

    pub const fn is_scalar(&self) -> bool {
        self.n == 1 && self.h == 1 && self.w == 1 && self.c == 1
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    #[inline]
    pub const fn index(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        ((n * self.h + h) * self.w + w) * self.c + c
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.h, self.w, self.c)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("label {label} of sample {sample} is out of range for {classes} classes")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error("backward needs a scalar output, got shape {0}")]
    NotScalar(Shape),
}

pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Builds a tensor by evaluating `f` at every `[n, h, w, c]` index.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for h in 0..shape.h {
                for w in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f([n, h, w, c]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    /// A single-sample channel vector `(1, 1, 1, len)`.
    pub fn vector(values: Vec<T>) -> Self {
        Tensor {
            shape: Shape::vector(1, values.len()),
            data: values,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, n: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.shape.index(n, h, w, c)]
    }

    pub fn set(&mut self, n: usize, h: usize, w: usize, c: usize, v: T) {
        let i = self.shape.index(n, h, w, c);
        self.data[i] = v;
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::of(x.f64())).collect(),
        }
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self, TensorError> {
        Tensor::new(shape, self.data)
    }

    /// Copies the channel range `channels` out of every position.
    pub fn slice_channels(&self, channels: Range<usize>) -> Result<Self, TensorError> {
        if channels.start > channels.end || channels.end > self.shape.c {
            return Err(invalid(
                "slice_channels",
                format!("range {channels:?} outside {} channels", self.shape.c),
            ));
        }
        let width = channels.end - channels.start;
        let mut data = Vec::with_capacity(self.shape.n * self.shape.h * self.shape.w * width);
        if self.shape.c > 0 {
            for px in self.data.chunks_exact(self.shape.c) {
                data.extend_from_slice(&px[channels.clone()]);
            }
        }
        Ok(Tensor {
            shape: self.shape.with_c(width),
            data,
        })
    }

    /// Copies out samples `[start, end)` along the batch axis.
    pub fn slice_batch(&self, samples: Range<usize>) -> Result<Self, TensorError> {
        if samples.start > samples.end || samples.end > self.shape.n {
            return Err(invalid(
                "slice_batch",
                format!("range {samples:?} outside batch of {}", self.shape.n),
            ));
        }
        let per = self.shape.h * self.shape.w * self.shape.c;
        Ok(Tensor {
            shape: Shape {
                n: samples.end - samples.start,
                ..self.shape
            },
            data: self.data[samples.start * per..samples.end * per].to_vec(),
        })
    }

    /// Concatenates tensors of identical (h, w, c) along the batch axis.
    pub fn stack(parts: &[&Tensor<T>]) -> Result<Self, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("stack", "no tensors to stack"))?;
        let mut shape = first.shape;
        shape.n = 0;
        let mut data = Vec::new();
        for t in parts {
            if (t.shape.h, t.shape.w, t.shape.c) != (shape.h, shape.w, shape.c) {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    left: first.shape,
                    right: t.shape,
                });
            }
            shape.n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
