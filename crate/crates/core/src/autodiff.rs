//! Reverse-mode differentiation over the operation set the model needs.
//!
//! Model code is written once against [`Graph`]. Running it on a [`Tape`]
//! records every intermediate for a later [`Tape::backward`]; running it on
//! [`Eager`] computes values only, which keeps inference memory flat.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, Broadcast};
use crate::tensor::{Real, Tensor};

/// A learnable tensor addressed by a dotted path such as `layer2.D.U`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// The differentiable operation set. Every op validates shapes and returns a
/// dimension error naming both operands on mismatch.
pub trait Graph<T: Real> {
    type Var: Clone;

    fn constant(&self, value: Tensor<T>) -> Self::Var;
    fn param(&self, p: &Parameter<T>) -> Self::Var;
    fn value(&self, v: &Self::Var) -> Tensor<T>;
    fn shape(&self, v: &Self::Var) -> Vec<usize>;

    fn matmul(&self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn conv2d(&self, x: &Self::Var, k: &Self::Var, stride: usize) -> Result<Self::Var>;
    fn conv_transpose2d(
        &self,
        a: &Self::Var,
        k: &Self::Var,
        stride: usize,
        out_size: Option<(usize, usize)>,
    ) -> Result<Self::Var>;
    fn soft_threshold(&self, u: &Self::Var, lambda: &Self::Var) -> Result<Self::Var>;
    fn add(&self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn sub(&self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scale(&self, a: &Self::Var, factor: T) -> Result<Self::Var>;
    fn relu(&self, a: &Self::Var) -> Result<Self::Var>;
    fn softplus(&self, a: &Self::Var) -> Result<Self::Var>;
    fn global_average_pool(&self, a: &Self::Var) -> Result<Self::Var>;
    fn mse(&self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn sum(&self, a: &Self::Var) -> Result<Self::Var>;
    fn reshape(&self, a: &Self::Var, shape: &[usize]) -> Result<Self::Var>;
    fn lowrank_materialize(&self, u: &Self::Var, v: &Self::Var) -> Result<Self::Var>;
    fn local_mean(&self, x: &Self::Var, side: usize) -> Result<Self::Var>;
    fn concat(&self, parts: &[Self::Var]) -> Result<Self::Var>;
    /// Largest element as a `[1]` tensor; the gradient goes to the first maximizer.
    fn max(&self, a: &Self::Var) -> Result<Self::Var>;
    fn recip(&self, a: &Self::Var) -> Result<Self::Var>;
}

fn relu_t<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn concat_t<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.iter().any(|p| p.ndim() > 1) {
        let bad = parts.iter().find(|p| p.ndim() > 1).unwrap();
        return Err(Error::dim("concat", bad.shape(), &[0]));
    }
    let data: Vec<T> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    let n = data.len();
    Tensor::new(&[n], data)
}

/// Value-only evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Real> Graph<T> for Eager {
    type Var = Tensor<T>;

    fn constant(&self, value: Tensor<T>) -> Tensor<T> {
        value
    }
    fn param(&self, p: &Parameter<T>) -> Tensor<T> {
        p.value.clone()
    }
    fn value(&self, v: &Tensor<T>) -> Tensor<T> {
        v.clone()
    }
    fn shape(&self, v: &Tensor<T>) -> Vec<usize> {
        v.shape().to_vec()
    }
    fn matmul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::matmul(a, b)
    }
    fn conv2d(&self, x: &Tensor<T>, k: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        ops::conv2d(x, k, stride)
    }
    fn conv_transpose2d(
        &self,
        a: &Tensor<T>,
        k: &Tensor<T>,
        stride: usize,
        out_size: Option<(usize, usize)>,
    ) -> Result<Tensor<T>> {
        ops::conv_transpose2d(a, k, stride, out_size)
    }
    fn soft_threshold(&self, u: &Tensor<T>, lambda: &Tensor<T>) -> Result<Tensor<T>> {
        ops::soft_threshold(u, lambda)
    }
    fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::binary("add", a, b, |x, y| x + y)
    }
    fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::binary("sub", a, b, |x, y| x - y)
    }
    fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::binary("mul", a, b, |x, y| x * y)
    }
    fn scale(&self, a: &Tensor<T>, factor: T) -> Result<Tensor<T>> {
        Ok(a.map(|v| v * factor))
    }
    fn relu(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu_t(a))
    }
    fn softplus(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(a.map(ops::softplus_scalar))
    }
    fn global_average_pool(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        ops::global_average_pool(a)
    }
    fn mse(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mse(a, b)
    }
    fn sum(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(a.sum()))
    }
    fn reshape(&self, a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        a.clone().reshape(shape)
    }
    fn lowrank_materialize(&self, u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        ops::lowrank_materialize(u, v)
    }
    fn local_mean(&self, x: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
        ops::local_mean(x, side)
    }
    fn concat(&self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        concat_t(&parts.iter().collect::<Vec<_>>())
    }
    fn max(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::max_all(a)?.0)
    }
    fn recip(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(a.map(|v| T::one() / v))
    }
}

/// Handle to a node recorded on a [`Tape`].
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
    MatMul(usize, usize),
    Conv2d { x: usize, k: usize, stride: usize },
    ConvTranspose { a: usize, k: usize, stride: usize },
    SoftThreshold(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, T),
    Relu(usize),
    Softplus(usize),
    Gap(usize),
    Mse(usize, usize),
    Sum(usize),
    Reshape(usize),
    LowRank(usize, usize),
    LocalMean(usize, usize),
    Concat(Vec<usize>),
    Max(usize, usize),
    Recip(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of a computation. Node inputs always precede the node.
#[derive(Debug)]
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<Vec<(String, usize)>>,
    param_index: RefCell<HashMap<String, usize>>,
    grads: RefCell<Option<Vec<Option<Tensor<T>>>>>,
    check_finite: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
            param_index: RefCell::new(HashMap::new()),
            grads: RefCell::new(None),
            check_finite: Cell::new(cfg!(debug_assertions)),
        }
    }

    /// Reject any op whose output contains NaN or infinity. On by default in
    /// debug builds.
    pub fn set_check_finite(&self, on: bool) {
        self.check_finite.set(on);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value_ref(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.check_finite.get() && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var(nodes.len() - 1))
    }

    fn unary(
        &self,
        name: &'static str,
        a: Var,
        f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
        op: Op<T>,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value)?
        };
        self.push(name, value, op)
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
        op: Op<T>,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        self.push(name, value, op)
    }

    fn broadcast_binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(usize, usize, Broadcast) -> Op<T>,
    ) -> Result<Var> {
        let (value, kind) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let kind = ops::broadcast_kind(name, x.shape(), y.shape())?;
            (ops::binary(name, x, y, f)?, kind)
        };
        self.push(name, value, make(a.0, b.0, kind))
    }

    /// Reverse sweep from a scalar loss. Returns the gradient of every
    /// registered parameter; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Vec<(String, Tensor<T>)>> {
        if self.grads.borrow().is_some() {
            return Err(Error::State(
                "backward already ran on this tape; call reset() first".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::dim(
                "backward",
                nodes[loss.0].value.shape(),
                &[],
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| &nodes[i].value;
            let mut emit = |i: usize, t: Tensor<T>| match &mut grads[i] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ga, gb) = ops::matmul_backward(val(*a), val(*b), &g);
                    emit(*a, ga);
                    emit(*b, gb);
                }
                Op::Conv2d { x, k, stride } => {
                    let (gx, gk) = ops::conv2d_backward(val(*x), val(*k), *stride, &g);
                    emit(*x, gx);
                    emit(*k, gk);
                }
                Op::ConvTranspose { a, k, stride } => {
                    let (ga, gk) = ops::conv_transpose2d_backward(val(*a), val(*k), *stride, &g);
                    emit(*a, ga);
                    emit(*k, gk);
                }
                Op::SoftThreshold(u, l) => {
                    let (gu, gl) = ops::soft_threshold_backward(val(*u), val(*l), &node.value, &g);
                    emit(*u, gu);
                    emit(*l, gl);
                }
                Op::Add(a, b, kind) => {
                    let gb = ops::reduce_to(*kind, &g, val(*b).shape());
                    emit(*a, g.clone());
                    emit(*b, gb);
                }
                Op::Sub(a, b, kind) => {
                    let gb = ops::reduce_to(*kind, &g, val(*b).shape()).map(|v| -v);
                    emit(*a, g.clone());
                    emit(*b, gb);
                }
                Op::Mul(a, b, kind) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = ops::binary("mul", &g, y, |gi, yi| gi * yi)?;
                    let gx = g.zip_map(x, |gi, xi| gi * xi)?;
                    emit(*a, ga);
                    emit(*b, ops::reduce_to(*kind, &gx, y.shape()));
                }
                Op::Scale(a, f) => emit(*a, g.map(|v| v * *f)),
                Op::Relu(a) => {
                    let ga = val(*a).zip_map(&g, |x, gi| if x > T::zero() { gi } else { T::zero() })?;
                    emit(*a, ga);
                }
                Op::Softplus(a) => {
                    let ga = val(*a).zip_map(&g, |x, gi| gi * ops::sigmoid_scalar(x))?;
                    emit(*a, ga);
                }
                Op::Gap(a) => {
                    let x = val(*a);
                    let inner = x.numel() / x.shape()[0];
                    let n = T::from_usize(inner).unwrap();
                    let ga = Tensor::from_fn(x.shape(), |i| g.data()[i / inner] / n);
                    emit(*a, ga);
                }
                Op::Mse(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let f = T::lit(2.0) * g.item() / T::from_usize(x.numel()).unwrap();
                    let ga = x.zip_map(y, |xi, yi| f * (xi - yi))?;
                    let gb = ga.map(|v| -v);
                    emit(*a, ga);
                    emit(*b, gb);
                }
                Op::Sum(a) => emit(*a, Tensor::full(val(*a).shape(), g.item())),
                Op::Reshape(a) => emit(*a, g.clone().reshape(val(*a).shape())?),
                Op::LowRank(u, v) => {
                    let (gu, gv) = ops::lowrank_materialize_backward(val(*u), val(*v), &g);
                    emit(*u, gu);
                    emit(*v, gv);
                }
                Op::LocalMean(x, side) => emit(*x, ops::local_mean_backward(&g, *side)),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = val(p).shape().to_vec();
                        let n = val(p).numel();
                        let part = Tensor::new(&shape, g.data()[offset..offset + n].to_vec())?;
                        offset += n;
                        emit(p, part);
                    }
                }
                Op::Max(a, at) => {
                    let mut ga = Tensor::zeros(val(*a).shape());
                    ga.data_mut()[*at] = g.item();
                    emit(*a, ga);
                }
                Op::Recip(a) => {
                    let ga = node.value.zip_map(&g, |r, gi| -gi * r * r)?;
                    emit(*a, ga);
                }
            }
            grads[id] = Some(g);
        }

        let out = self
            .params
            .borrow()
            .iter()
            .map(|(name, id)| {
                let g = grads[*id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(nodes[*id].value.shape()));
                (name.clone(), g)
            })
            .collect();
        drop(nodes);
        *self.grads.borrow_mut() = Some(grads);
        Ok(out)
    }

    /// Gradient of the last backward sweep with respect to any node.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let grads = self.grads.borrow();
        let grads = grads.as_ref()?;
        Some(
            grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.nodes.borrow()[v.0].value.shape())),
        )
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset(&self) {
        *self.grads.borrow_mut() = None;
    }
}

impl<T: Real> Graph<T> for Tape<T> {
    type Var = Var;

    fn constant(&self, value: Tensor<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(nodes.len() - 1)
    }

    fn param(&self, p: &Parameter<T>) -> Var {
        if let Some(&id) = self.param_index.borrow().get(&p.name) {
            return Var(id);
        }
        let v = self.constant(p.value.clone());
        self.params.borrow_mut().push((p.name.clone(), v.0));
        self.param_index.borrow_mut().insert(p.name.clone(), v.0);
        v
    }

    fn value(&self, v: &Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    fn shape(&self, v: &Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("matmul", *a, *b, ops::matmul, Op::MatMul(a.0, b.0))
    }

    fn conv2d(&self, x: &Var, k: &Var, stride: usize) -> Result<Var> {
        self.binary(
            "conv2d",
            *x,
            *k,
            |x, k| ops::conv2d(x, k, stride),
            Op::Conv2d {
                x: x.0,
                k: k.0,
                stride,
            },
        )
    }

    fn conv_transpose2d(
        &self,
        a: &Var,
        k: &Var,
        stride: usize,
        out_size: Option<(usize, usize)>,
    ) -> Result<Var> {
        self.binary(
            "conv_transpose2d",
            *a,
            *k,
            |a, k| ops::conv_transpose2d(a, k, stride, out_size),
            Op::ConvTranspose {
                a: a.0,
                k: k.0,
                stride,
            },
        )
    }

    fn soft_threshold(&self, u: &Var, lambda: &Var) -> Result<Var> {
        self.binary(
            "soft_threshold",
            *u,
            *lambda,
            ops::soft_threshold,
            Op::SoftThreshold(u.0, lambda.0),
        )
    }

    fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.broadcast_binary("add", *a, *b, |x, y| x + y, Op::Add)
    }

    fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.broadcast_binary("sub", *a, *b, |x, y| x - y, Op::Sub)
    }

    fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.broadcast_binary("mul", *a, *b, |x, y| x * y, Op::Mul)
    }

    fn scale(&self, a: &Var, factor: T) -> Result<Var> {
        self.unary("scale", *a, |x| Ok(x.map(|v| v * factor)), Op::Scale(a.0, factor))
    }

    fn relu(&self, a: &Var) -> Result<Var> {
        self.unary("relu", *a, |x| Ok(relu_t(x)), Op::Relu(a.0))
    }

    fn softplus(&self, a: &Var) -> Result<Var> {
        self.unary(
            "softplus",
            *a,
            |x| Ok(x.map(ops::softplus_scalar)),
            Op::Softplus(a.0),
        )
    }

    fn global_average_pool(&self, a: &Var) -> Result<Var> {
        self.unary(
            "global_average_pool",
            *a,
            ops::global_average_pool,
            Op::Gap(a.0),
        )
    }

    fn mse(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("mse", *a, *b, ops::mse, Op::Mse(a.0, b.0))
    }

    fn sum(&self, a: &Var) -> Result<Var> {
        self.unary("sum", *a, |x| Ok(Tensor::scalar(x.sum())), Op::Sum(a.0))
    }

    fn reshape(&self, a: &Var, shape: &[usize]) -> Result<Var> {
        self.unary(
            "reshape",
            *a,
            |x| x.clone().reshape(shape),
            Op::Reshape(a.0),
        )
    }

    fn lowrank_materialize(&self, u: &Var, v: &Var) -> Result<Var> {
        self.binary(
            "lowrank_materialize",
            *u,
            *v,
            ops::lowrank_materialize,
            Op::LowRank(u.0, v.0),
        )
    }

    fn local_mean(&self, x: &Var, side: usize) -> Result<Var> {
        self.unary(
            "local_mean",
            *x,
            |x| ops::local_mean(x, side),
            Op::LocalMean(x.0, side),
        )
    }

    fn concat(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            concat_t(&parts.iter().map(|p| &nodes[p.0].value).collect::<Vec<_>>())?
        };
        self.push("concat", value, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    fn max(&self, a: &Var) -> Result<Var> {
        let (value, at) = ops::max_all(&self.nodes.borrow()[a.0].value)?;
        self.push("max", value, Op::Max(a.0, at))
    }

    fn recip(&self, a: &Var) -> Result<Var> {
        self.unary("recip", *a, |x| Ok(x.map(|v| T::one() / v)), Op::Recip(a.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let tape = Tape::<f64>::new();
        let p = Parameter::new("w", Tensor::from_fn(&[2, 3], |i| i as f64));
        let w = tape.param(&p);
        let loss = tape.sum(&w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].1, Tensor::ones(&[2, 3]));
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let tape = Tape::<f64>::new();
        let a = Parameter::new("a", Tensor::ones(&[3]));
        let b = Parameter::new("b", Tensor::ones(&[2, 2]));
        let va = tape.param(&a);
        let _vb = tape.param(&b);
        let loss = tape.sum(&va).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[1].0, "b");
        assert_eq!(grads[1].1, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn second_backward_requires_reset() {
        let tape = Tape::<f64>::new();
        let p = Parameter::new("w", Tensor::ones(&[2]));
        let w = tape.param(&p);
        let loss = tape.sum(&w).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::State(_))));
        tape.reset();
        assert!(tape.backward(loss).is_ok());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::ones(&[2]));
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn repeated_param_registration_shares_node() {
        let tape = Tape::<f64>::new();
        let p = Parameter::new("w", Tensor::ones(&[2]));
        let a = tape.param(&p);
        let b = tape.param(&p);
        assert_eq!(a, b);
        let s = tape.add(&a, &b).unwrap();
        let loss = tape.sum(&s).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[0].1.data(), &[2.0, 2.0]);
    }

    #[test]
    fn non_finite_outputs_are_reported() {
        let tape = Tape::<f64>::new();
        tape.set_check_finite(true);
        let a = tape.constant(Tensor::full(&[1], f64::MAX));
        assert!(matches!(tape.scale(&a, 10.0), Err(Error::NonFinite("scale"))));
    }

    #[test]
    fn pointwise_values() {
        let g = Eager;
        let x = Tensor::new(&[2], vec![-1.0f64, 2.0]).unwrap();
        assert_eq!(Graph::<f64>::relu(&g, &x).unwrap().data(), &[0.0, 2.0]);
        let z = Tensor::scalar(0.0f64);
        let sp = Graph::<f64>::softplus(&g, &z).unwrap();
        assert!((sp.item() - 0.6931).abs() < 1e-4);
        let m = Graph::<f64>::mse(&g, &x, &x).unwrap();
        assert_eq!(m.item(), 0.0);
        assert_eq!(Graph::<f64>::recip(&g, &x).unwrap().data(), &[-1.0, 0.5]);
    }

    #[test]
    fn max_routes_gradient_to_first_maximizer() {
        let tape = Tape::<f64>::new();
        let a = tape.param(&Parameter::new("a", Tensor::new(&[4], vec![1.0, 3.0, 3.0, -2.0]).unwrap()));
        let m = tape.max(&a).unwrap();
        assert_eq!(tape.value_ref(m).data(), &[3.0]);
        let grads = tape.backward(tape.sum(&m).unwrap()).unwrap();
        assert_eq!(grads[0].1.data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
