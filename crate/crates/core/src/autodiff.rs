//! Tape-based reverse-mode differentiation over the kernels in [`crate::ops`].
//!
//! A [`Tape`] records every forward operation together with its output value.
//! Trainable weights live in a [`ParamStore`]; the tape copies a parameter's
//! value in when it is used and [`Tape::backward`] accumulates into the
//! store's gradient buffers.

use std::collections::HashMap;

use crate::error::{invalid, Error, Result};
use crate::ops;
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub moment1: Tensor<T>,
    pub moment2: Tensor<T>,
    pub step_count: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(shape),
            moment1: Tensor::zeros(shape),
            moment2: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }
}

/// Ordered, uniquely-named collection of parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(invalid(
                "ParamStore::insert",
                format!("duplicate parameter name {name:?}"),
            ));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Relu {
        input: Var,
    },
    Huber {
        prediction: Var,
        target: Var,
        delta: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of one forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the root with respect to every recorded value that needed one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input (no gradient tracked).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    /// `bias` must hold exactly one value per output channel.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let out = {
            let b = self.value(bias);
            ops::conv2d(self.value(input), self.value(weight), b.data(), padding)?
        };
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            },
            ng,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2d(self.value(input))?;
        let ng = self.needs(input);
        Ok(self.push(out, Op::MaxPool { input, argmax }, ng))
    }

    pub fn upsample2x(&mut self, input: Var) -> Var {
        let out = ops::upsample2x(self.value(input));
        let ng = self.needs(input);
        self.push(out, Op::Upsample { input }, ng)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, ng))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let ng = self.needs(input);
        self.push(out, Op::Relu { input }, ng)
    }

    /// Scalar mean Huber loss, recorded as a 1×1×1×1 value.
    pub fn huber_loss(&mut self, prediction: Var, target: Var, delta: T) -> Result<Var> {
        let loss = ops::huber_loss(self.value(prediction), self.value(target), delta)?;
        let ng = self.needs(prediction) || self.needs(target);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Huber {
                prediction,
                target,
                delta,
            },
            ng,
        ))
    }

    /// Back-propagates from a scalar `root`, accumulating parameter gradients
    /// into `store` (they are not cleared first) and returning the gradients
    /// of every other tracked value.
    pub fn backward(&self, root: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let root_shape = self.value(root).shape();
        if root_shape.numel() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_shape, T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    store.get_mut(*id).grad.add_assign(&g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    padding,
                } => {
                    let (gi, gw, gb) =
                        ops::conv2d_backward(self.value(*input), self.value(*weight), *padding, &g);
                    if self.needs(*input) {
                        accumulate(&mut grads, *input, gi);
                    }
                    if self.needs(*weight) {
                        accumulate(&mut grads, *weight, gw);
                    }
                    if self.needs(*bias) {
                        let bshape = self.value(*bias).shape();
                        accumulate(&mut grads, *bias, Tensor::from_vec(bshape, gb)?);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let gi = ops::maxpool2d_backward(self.value(*input).shape(), argmax, &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Upsample { input } => {
                    let gi = ops::upsample2x_backward(self.value(*input).shape(), &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Concat { a, b } => {
                    let (ga, gb) = ops::concat_channels_backward(
                        self.value(*a).shape(),
                        self.value(*b).shape(),
                        &g,
                    );
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Relu { input } => {
                    let gi = ops::relu_backward(self.value(*input), &g);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Huber {
                    prediction,
                    target,
                    delta,
                } => {
                    let gp = ops::huber_loss_backward(
                        self.value(*prediction),
                        self.value(*target),
                        *delta,
                        g.data()[0],
                    );
                    if self.needs(*target) {
                        accumulate(&mut grads, *target, gp.map(|v| -v));
                    }
                    if self.needs(*prediction) {
                        accumulate(&mut grads, *prediction, gp);
                    }
                }
            }
            // Keep leaf gradients for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
