//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! A [`Graph`] is the computation record: every call appends one node holding
//! its value and the rule that maps an output gradient back to its inputs.
//! Node order equals execution order, so [`Graph::backward`] simply walks the
//! record in reverse. A value consumed several times receives the sum of the
//! partials from each use.

use std::borrow::Cow;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, DeconvGeom, Padding, PoolGeom};
use crate::tensor::{shape_str, Scalar, Tensor};

/// Handle to a value in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at input `x`.
    pub fn derivative<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (S::one() - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                S::one() - t * t
            }
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::arg(format!("unknown activation '{other}'"))),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Applies an activation to every element of a tensor.
pub fn apply_activation<S: Scalar>(kind: Activation, input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| kind.apply(v))
}

enum Op<S> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<S>,
    },
    Deconv {
        input: Var,
        kernel: Var,
        geom: DeconvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    MatVec {
        weight: Var,
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Reshape(Var),
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Computation record for reverse-mode differentiation.
///
/// Leaves may borrow their tensors (`'a`) so model parameters are not copied
/// into every forward pass.
pub struct Graph<'a, S: Scalar = f64> {
    nodes: Vec<Node<'a, S>>,
}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<S>>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// A differentiable leaf (model parameter or input under test).
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn param_ref(&mut self, t: &'a Tensor<S>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (data, frozen weights).
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<S>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Cross-correlation of a `c×h×w` input with `f×c×kh×kw` kernels.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad_h: Padding,
        pad_w: Padding,
    ) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let kshape = self.shape(kernel).to_vec();
        let [f, kc, kh, kw] = kshape[..] else {
            return Err(Error::dim(format!(
                "conv2d: kernel must be f×c×kh×kw, got {}",
                shape_str(&kshape)
            )));
        };
        let geom = ConvGeom::new((c, h, w), (f, kc, kh, kw), stride, pad_h, pad_w)?;
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::dim(format!(
                    "conv2d: bias {} does not match {f} filters",
                    shape_str(self.shape(b))
                )));
            }
        }
        let (out, cols) = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![f, geom.out_h, geom.out_w], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push_op(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            &inputs,
        ))
    }

    /// Convolution with `pad` total zero rows/columns per spatial dimension.
    pub fn conv2d_total_pad(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let p = Padding::total(pad);
        self.conv2d(input, kernel, bias, stride, p, p)
    }

    /// Learnable upsampling: the adjoint of a stride-`stride` convolution with
    /// `c_in×c_out×F×F` kernels, center-cropped to `target`.
    pub fn transposed_conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        target: (usize, usize),
    ) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let kshape = self.shape(kernel).to_vec();
        let [ki, ko, kh, kw] = kshape[..] else {
            return Err(Error::dim(format!(
                "transposed_conv2d: kernel must be c_in×c_out×F×F, got {}",
                shape_str(&kshape)
            )));
        };
        let geom = DeconvGeom::new((c, h, w), (ki, ko, kh, kw), stride, target)?;
        let out = kernels::deconv_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(vec![ko, geom.out_h, geom.out_w], out)?;
        Ok(self.push_op(
            value,
            Op::Deconv {
                input,
                kernel,
                geom,
            },
            &[input, kernel],
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let geom = PoolGeom::new(self.value(input).chw()?, k, stride)?;
        let (out, argmax) = kernels::maxpool_forward(&geom, self.value(input).data());
        let value = Tensor::new(vec![geom.channels, geom.out_h, geom.out_w], out)?;
        Ok(self.push_op(value, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Var {
        let value = apply_activation(kind, self.value(input));
        self.push_op(value, Op::Activation { input, kind }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(Activation::Sigmoid, input)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(Activation::Tanh, input)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(Activation::Relu, input)
    }

    /// `W x` for `W: m×n`, `x: n`.
    pub fn matvec(&mut self, weight: Var, input: Var) -> Result<Var> {
        let ws = self.shape(weight);
        let xs = self.shape(input);
        let (m, n) = match (ws, xs) {
            ([m, n], [k]) if n == k => (*m, *n),
            _ => {
                return Err(Error::dim(format!(
                    "dense: weights {} cannot multiply input {}",
                    shape_str(ws),
                    shape_str(xs)
                )))
            }
        };
        let y = kernels::matvec(self.value(weight).data(), self.value(input).data(), m, n);
        Ok(self.push_op(Tensor::from_vec(y), Op::MatVec { weight, input }, &[weight, input]))
    }

    /// `W x + b`.
    pub fn dense(&mut self, weight: Var, input: Var, bias: Var) -> Result<Var> {
        let y = self.matvec(weight, input)?;
        self.add(y, bias)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "{what}: shapes {} and {} differ",
                shape_str(va.shape()),
                shape_str(vb.shape())
            )));
        }
        va.zip_map(vb, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push_op(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push_op(v, Op::Sub(a, b), &[a, b]))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "hadamard", |x, y| x * y)?;
        Ok(self.push_op(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(input).clone().reshape(shape)?;
        Ok(self.push_op(v, Op::Reshape(input), &[input]))
    }

    pub fn flatten(&mut self, input: Var) -> Var {
        let n = self.value(input).len();
        self.reshape(input, &[n]).expect("flatten preserves size")
    }

    /// Hash of every piecewise-linear branch taken (relu signs, pool argmax).
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Activation {
                    input,
                    kind: Activation::Relu,
                } => {
                    for v in self.nodes[input.0].value.data() {
                        (*v > S::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of `⟨seed, output⟩` with respect to every leaf.
    pub fn backward(&self, output: Var, seed: &Tensor<S>) -> Result<Gradients<S>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::arg("backward: output is not in this record"));
        }
        if seed.shape() != self.shape(output) {
            return Err(Error::dim(format!(
                "backward: seed {} does not match output {}",
                shape_str(seed.shape()),
                shape_str(self.shape(output))
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        grads.truncate(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn grad_buf<'g>(
        &self,
        grads: &'g mut [Option<Tensor<S>>],
        v: Var,
    ) -> Option<&'g mut [S]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(shape))
                .data_mut(),
        )
    }

    fn backward_node(&self, node: &Node<'a, S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let kdata = self.value(*kernel).data();
                // Three disjoint gradient slots; take them out to borrow independently.
                let mut dx = self.take_buf(grads, *input);
                let mut dk = self.take_buf(grads, *kernel);
                let mut db = bias.and_then(|b| self.take_buf(grads, b));
                kernels::conv2d_backward(
                    geom,
                    cols,
                    kdata,
                    gd,
                    dx.as_mut().map(|t| t.data_mut()),
                    dk.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                self.put_buf(grads, *input, dx);
                self.put_buf(grads, *kernel, dk);
                if let Some(b) = bias {
                    self.put_buf(grads, *b, db);
                }
            }
            Op::Deconv {
                input,
                kernel,
                geom,
            } => {
                let mut dx = self.take_buf(grads, *input);
                let mut dk = self.take_buf(grads, *kernel);
                kernels::deconv_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gd,
                    dx.as_mut().map(|t| t.data_mut()),
                    dk.as_mut().map(|t| t.data_mut()),
                );
                self.put_buf(grads, *input, dx);
                self.put_buf(grads, *kernel, dk);
            }
            Op::MaxPool { input, argmax } => {
                if let Some(dx) = self.grad_buf(grads, *input) {
                    for (&src, &gv) in argmax.iter().zip(gd) {
                        dx[src] += gv;
                    }
                }
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                if let Some(dx) = self.grad_buf(grads, *input) {
                    for i in 0..dx.len() {
                        let d = match kind {
                            Activation::Sigmoid => y[i] * (S::one() - y[i]),
                            Activation::Tanh => S::one() - y[i] * y[i],
                            Activation::Relu => {
                                if x[i] > S::zero() {
                                    S::one()
                                } else {
                                    S::zero()
                                }
                            }
                            Activation::Identity => S::one(),
                        };
                        dx[i] += d * gd[i];
                    }
                }
            }
            Op::MatVec { weight, input } => {
                let w = self.value(*weight);
                let n = w.shape()[1];
                if let Some(dx) = self.grad_buf(grads, *input) {
                    kernels::matvec_t_acc(w.data(), gd, n, dx);
                }
                let x = self.value(*input).data();
                if let Some(dw) = self.grad_buf(grads, *weight) {
                    kernels::outer_acc(gd, x, dw);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.grad_buf(grads, *v) {
                        crate::tensor::axpy(S::one(), gd, d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.grad_buf(grads, *a) {
                    crate::tensor::axpy(S::one(), gd, d);
                }
                if let Some(d) = self.grad_buf(grads, *b) {
                    crate::tensor::axpy(-S::one(), gd, d);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.grad_buf(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += gd[i] * vb[i];
                    }
                }
                if let Some(d) = self.grad_buf(grads, *b) {
                    for i in 0..d.len() {
                        d[i] += gd[i] * va[i];
                    }
                }
            }
            Op::Reshape(input) => {
                if let Some(d) = self.grad_buf(grads, *input) {
                    crate::tensor::axpy(S::one(), gd, d);
                }
            }
        }
    }

    fn take_buf(&self, grads: &mut [Option<Tensor<S>>], v: Var) -> Option<Tensor<S>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape())),
        )
    }

    fn put_buf(&self, grads: &mut [Option<Tensor<S>>], v: Var, t: Option<Tensor<S>>) {
        if t.is_some() {
            grads[v.0] = t;
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<S: Scalar = f64> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a leaf, or `None` if no path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zero-filled when no path reached it.
    pub fn wrt(&self, graph: &Graph<'_, S>, v: Var) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, v).unwrap()
    }

    #[test]
    fn identity_kernel_conv() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 3, 3], 1.0));
        let k = g.param(t(&[1, 1, 1, 1], &[1.0]));
        let b = g.param(t(&[1], &[0.0]));
        let y = g.conv2d_total_pad(x, k, Some(b), 1, 0).unwrap();
        assert_eq!(g.value(y), &Tensor::full(&[1, 3, 3], 1.0));
    }

    #[test]
    fn full_window_sum() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = g.param(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.conv2d_total_pad(x, k, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[10.0]);
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 4]));
        let k = g.param(Tensor::zeros(&[1, 3, 3, 3]));
        let err = g.conv2d_total_pad(x, k, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("1×3×3×3") && err.contains("2×4×4"), "{err}");
    }

    #[test]
    fn kernel_stamping() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1], &[1.0]));
        let k = g.param(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.transposed_conv2d(x, k, 1, (2, 2)).unwrap();
        assert_eq!(g.value(y), &Tensor::full(&[1, 2, 2], 1.0));
        assert!(g.transposed_conv2d(x, k, 1, (3, 3)).is_err());
    }

    #[test]
    fn maxpool_forward_and_tie_break() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);

        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(&[1, 4, 4], 0.5));
        let y = g.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y), &Tensor::full(&[1, 2, 2], 0.5));
        let grads = g.backward(y, &Tensor::full(&[1, 2, 2], 1.0)).unwrap();
        let dx = grads.get(x).unwrap().data().to_vec();
        // first element of each 2×2 window in row-major order
        let mut want = vec![0.0; 16];
        for i in [0, 2, 8, 10] {
            want[i] = 1.0;
        }
        assert_eq!(dx, want);
    }

    #[test]
    fn activation_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(-3.0f64), 0.0);
        assert!((sigmoid(-800.0f64)).is_finite());
        assert!((sigmoid(800.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[0.0]));
        let y = g.sigmoid(x);
        let grads = g.backward(y, &t(&[1], &[1.0])).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn product_rule_accumulates_both_uses() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[2.0]));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y, &t(&[1], &[1.0])).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn dense_identity_and_shape_errors() {
        let mut g = Graph::<f64>::new();
        let w = g.param(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.param(Tensor::zeros(&[2]));
        let x = g.constant(t(&[2], &[3.0, -7.0]));
        let y = g.dense(w, x, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -7.0]);
        let bad = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.matvec(w, bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let unused = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.tanh(x);
        let grads = g.backward(y, &Tensor::full(&[2], 1.0)).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(&g, unused), Tensor::zeros(&[3]));
    }

    #[test]
    fn seed_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.tanh(x);
        assert!(matches!(
            g.backward(y, &Tensor::zeros(&[3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(t(&[1], &[3.0]));
        let x = g.param(t(&[1], &[2.0]));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y, &t(&[1], &[1.0])).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0]);
    }
}
