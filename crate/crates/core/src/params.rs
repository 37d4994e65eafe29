//! Named learnable parameters, their initialization, and the small layer
//! wrappers the model is assembled from.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Real, Shape, Tensor, TensorError};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor<f32>,
    pub grad: Tensor<f32>,
}

/// Ordered, uniquely named parameter set of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Parameter values converted to precision `T`, in store order.
    pub fn values<T: Real>(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.cast()).collect()
    }

    /// Places every parameter on `tape` as a leaf; the returned handles are
    /// indexed by [`ParamId`].
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.cast(), requires_grad))
            .collect()
    }

    /// Adds the gradients of the bound handles into the accumulators.
    pub fn accumulate_grads(&mut self, grads: &Gradients<f32>, bound: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(bound) {
            if let Some(g) = grads.slice(v) {
                for (a, &d) in p.grad.data_mut().iter_mut().zip(g) {
                    *a += d;
                }
            }
        }
        self.grads_ready = true;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }
}

/// Deterministic parameter initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Gaussian with std `sqrt(2 / fan_in)`.
    pub fn he_normal(&mut self, shape: Shape, fan_in: usize) -> Tensor<f32> {
        self.normal(shape, (2.0 / fan_in.max(1) as f64).sqrt())
    }

    /// Gaussian with std `sqrt(1 / fan_in)`.
    pub fn lecun_normal(&mut self, shape: Shape, fan_in: usize) -> Tensor<f32> {
        self.normal(shape, (1.0 / fan_in.max(1) as f64).sqrt())
    }

    pub fn weights(&mut self, scheme: Init, shape: Shape, fan_in: usize) -> Tensor<f32> {
        match scheme {
            Init::He => self.he_normal(shape, fan_in),
            Init::Lecun => self.lecun_normal(shape, fan_in),
            Init::Zeros => Tensor::zeros(shape),
        }
    }

    fn normal(&mut self, shape: Shape, std: f64) -> Tensor<f32> {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..shape.numel())
            .map(|_| normal.sample(&mut self.rng) as f32)
            .collect();
        Tensor::new(shape, data).expect("shape and data agree")
    }
}

/// Weight initialization scheme. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// For layers followed by ReLU.
    He,
    /// For layers feeding linear, gated or multiplicative paths.
    Lecun,
    Zeros,
}

/// Convolution with bias. Weight `(kh, kw, cin, cout)`, bias `(1, 1, 1, cout)`.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        Self::with_init(store, init, Init::He, name, kernel, cin, cout, stride)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init(
        store: &mut ParamStore,
        init: &mut Initializer,
        scheme: Init,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::Config(format!("{name}: zero-width convolution {cin}->{cout}")));
        }
        let w = init.weights(scheme, Shape::new(kernel, kernel, cin, cout), kernel * kernel * cin);
        Ok(Conv {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(1, cout)))?,
            stride,
            padding: Padding::Same,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        tape.conv2d(
            x,
            p[self.weight.index()],
            p[self.bias.index()],
            self.stride,
            self.padding,
        )
    }
}

/// Fully connected layer over per-sample vectors.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Self::with_init(store, init, Init::He, name, cin, cout)
    }

    pub fn with_init(
        store: &mut ParamStore,
        init: &mut Initializer,
        scheme: Init,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::Config(format!("{name}: zero-width layer {cin}->{cout}")));
        }
        let w = init.weights(scheme, Shape::new(1, 1, cin, cout), cin);
        Ok(Dense {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(1, cout)))?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        tape.linear(x, p[self.weight.index()], p[self.bias.index()])
    }
}
