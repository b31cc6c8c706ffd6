//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order, so node indices are
//! already a topological order. [`Graph::backward`] sweeps them in reverse once.
//! Leaf gradients accumulate across repeated `backward` calls until
//! [`Graph::zero_grad`]; intermediate gradients are recomputed each sweep.

pub mod gradcheck;
pub mod kernels;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use kernels::ConvGeometry;

/// Lower clamp applied to every `log` input.
pub const LOG_CLAMP: f64 = 1e-7;

/// Handle to a node in one [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    AddScalar(Var),
    Scale(Var, T),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sum(Var),
    Mean(Var),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
        filters: usize,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        /// Geometry of the forward convolution this op is the adjoint of.
        geom: ConvGeometry,
        in_channels: usize,
    },
    BiasAdd(Var, Var),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Record of executed operations with their values, confined to one thread of use.
#[derive(Clone, Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a copy of `tensor` as a leaf, inheriting its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.input(tensor.clone(), requires_grad)
    }

    /// Registers an owned tensor as a leaf.
    pub fn input(&mut self, tensor: Tensor<T>, requires_grad: bool) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, requires_grad)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.input(tensor, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` if it does not require grad or
    /// no gradient has reached it yet.
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.numel() == 1 {
            let y = vb.data()[0];
            va.map(|x| f(x, y))
        } else if va.numel() == 1 {
            let x = va.data()[0];
            vb.map(|y| f(x, y))
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// Natural log of `max(x, LOG_CLAMP)`. The gradient is zero where the clamp is active.
    pub fn log(&mut self, x: Var) -> Var {
        let eps = T::cast(LOG_CLAMP);
        self.unary(x, Op::Log(x), |v| v.max(eps).ln())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| {
            if v > T::zero() {
                v
            } else {
                v * slope
            }
        })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.reduce_total("sum", x)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(total), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let total = self.reduce_total("mean", x)?;
        let m = T::cast(self.nodes[x.0].value.numel() as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(total / m), Op::Mean(x), rg))
    }

    fn reduce_total(&self, op: &'static str, x: Var) -> Result<T> {
        let v = &self.nodes[x.0].value;
        if v.numel() == 0 {
            return Err(Error::InvalidShape {
                op,
                shape: v.shape().to_vec(),
                reason: "empty tensor".into(),
            });
        }
        // Sequential left fold keeps the reduction order fixed.
        Ok(v.data().iter().fold(T::zero(), |acc, &x| acc + x))
    }

    /// `[M, K] · [K, N] → [M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.nodes[a.0].value.data(),
            false,
            self.nodes[b.0].value.data(),
            false,
            T::zero(),
            &mut out,
        );
        let value = Tensor::new([m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Cross-correlation of `[N, C, H, W]` with `[F, C, k, k]` over zero-padded windows.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (
            self.nodes[input.0].value.shape().to_vec(),
            self.nodes[kernel.0].value.shape().to_vec(),
        );
        if xs.len() != 4 || ks.len() != 4 || ks[1] != xs[1] || ks[2] != ks[3] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        let geom = ConvGeometry::new(xs[1], xs[2], xs[3], ks[2], stride, pad).map_err(|e| {
            Error::InvalidShape {
                op: "conv2d",
                shape: xs.clone(),
                reason: format!("kernel {ks:?}: {e}"),
            }
        })?;
        let (n, filters) = (xs[0], ks[0]);
        let mut out = vec![T::zero(); n * filters * geom.output_positions()];
        kernels::conv2d_forward(
            &geom,
            filters,
            self.nodes[input.0].value.data(),
            self.nodes[kernel.0].value.data(),
            &mut out,
        );
        let value = Tensor::new([n, filters, geom.out_height, geom.out_width], out)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
                filters,
            },
            rg,
        ))
    }

    /// Transposed convolution of `[N, C, H, W]` with `[C, F, k, k]`, producing
    /// `[N, F, (H−1)·stride − 2·pad + k, …]`. It is the adjoint of [`conv2d`](Self::conv2d)
    /// with the same kernel, stride and padding.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xs, ks) = (
            self.nodes[input.0].value.shape().to_vec(),
            self.nodes[kernel.0].value.shape().to_vec(),
        );
        if xs.len() != 4 || ks.len() != 4 || ks[0] != xs[1] || ks[2] != ks[3] {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: xs,
                rhs: ks,
            });
        }
        let geom = ConvGeometry::for_transposed(ks[1], xs[2], xs[3], ks[2], stride, pad)?;
        let (n, in_channels) = (xs[0], xs[1]);
        let mut out = vec![T::zero(); n * geom.input_len()];
        kernels::conv2d_input_grad(
            &geom,
            in_channels,
            self.nodes[input.0].value.data(),
            self.nodes[kernel.0].value.data(),
            &mut out,
        );
        let value = Tensor::new([n, geom.channels, geom.height, geom.width], out)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                geom,
                in_channels,
            },
            rg,
        ))
    }

    /// Adds `bias[j]` to every element whose axis-1 index is `j` (per-feature or
    /// per-channel bias). This is the only non-scalar broadcast the graph supports.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.nodes[x.0].value.shape(), self.nodes[bias.0].value.shape());
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                lhs: xs.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let channels = xs[1];
        let inner: usize = xs[2..].iter().product();
        let b = self.nodes[bias.0].value.data().to_vec();
        let mut value = self.nodes[x.0].value.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += b[(i / inner) % channels];
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::BiasAdd(x, bias), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.nodes[x.0].value.reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Back-propagates from a scalar `loss`, accumulating into every reachable
    /// leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        if !loss_node.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.requires_grad, g) {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += *d),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match node.op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send_broadcast(grads, a, g.to_vec());
                self.send_broadcast(grads, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send_broadcast(grads, a, g.to_vec());
                self.send_broadcast(grads, b, g.iter().map(|&d| -d).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let pick = |v: &[T], j: usize| if v.len() == 1 { v[0] } else { v[j] };
                if self.nodes[a.0].requires_grad {
                    let da = g.iter().enumerate().map(|(j, &d)| d * pick(vb, j)).collect();
                    self.send_broadcast(grads, a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = g.iter().enumerate().map(|(j, &d)| d * pick(va, j)).collect();
                    self.send_broadcast(grads, b, db);
                }
            }
            Op::Neg(x) => self.send(grads, x, g.iter().map(|&d| -d).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.send(grads, x, g.to_vec()),
            Op::Scale(x, c) => self.send(grads, x, g.iter().map(|&d| d * c).collect()),
            Op::Log(x) => {
                let eps = T::cast(LOG_CLAMP);
                let dx = g
                    .iter()
                    .zip(val(x))
                    .map(|(&d, &v)| if v < eps { T::zero() } else { d / v })
                    .collect();
                self.send(grads, x, dx);
            }
            Op::Tanh(x) => {
                let dx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&d, &y)| d * (T::one() - y * y))
                    .collect();
                self.send(grads, x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&d, &y)| d * y * (T::one() - y))
                    .collect();
                self.send(grads, x, dx);
            }
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(val(x))
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                self.send(grads, x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let dx = g
                    .iter()
                    .zip(val(x))
                    .map(|(&d, &v)| if v > T::zero() { d } else { d * slope })
                    .collect();
                self.send(grads, x, dx);
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.send(grads, x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                self.send(grads, x, vec![g[0] / T::cast(n as f64); n]);
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.nodes[a.0].requires_grad {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm(m, n, k, g, false, val(b), true, T::zero(), &mut da);
                    self.send(grads, a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm(k, m, n, val(a), true, g, false, T::zero(), &mut db);
                    self.send(grads, b, db);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                filters,
            } => {
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![T::zero(); self.nodes[input.0].value.numel()];
                    kernels::conv2d_input_grad(&geom, filters, g, val(kernel), &mut dx);
                    self.send(grads, input, dx);
                }
                if self.nodes[kernel.0].requires_grad {
                    let mut dw = vec![T::zero(); self.nodes[kernel.0].value.numel()];
                    kernels::conv2d_weight_grad(&geom, filters, val(input), g, &mut dw);
                    #[cfg(feature = "fault-inject")]
                    dw.iter_mut().for_each(|v| *v = -*v);
                    self.send(grads, kernel, dw);
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                geom,
                in_channels,
            } => {
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![T::zero(); self.nodes[input.0].value.numel()];
                    kernels::conv2d_forward(&geom, in_channels, g, val(kernel), &mut dx);
                    self.send(grads, input, dx);
                }
                if self.nodes[kernel.0].requires_grad {
                    // Roles swap relative to conv2d: the upstream gradient is the
                    // convolution input and this op's input is its output gradient.
                    let mut dw = vec![T::zero(); self.nodes[kernel.0].value.numel()];
                    kernels::conv2d_weight_grad(&geom, in_channels, g, val(input), &mut dw);
                    self.send(grads, kernel, dw);
                }
            }
            Op::BiasAdd(x, bias) => {
                self.send(grads, x, g.to_vec());
                if self.nodes[bias.0].requires_grad {
                    let shape = self.nodes[x.0].value.shape();
                    let channels = shape[1];
                    let inner: usize = shape[2..].iter().product();
                    let mut db = vec![T::zero(); channels];
                    for (j, &d) in g.iter().enumerate() {
                        db[(j / inner) % channels] += d;
                    }
                    self.send(grads, bias, db);
                }
            }
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<T>>], target: Var, delta: Vec<T>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Like [`send`](Self::send) but folds the gradient down for a broadcast scalar operand.
    fn send_broadcast(&self, grads: &mut [Option<Vec<T>>], target: Var, delta: Vec<T>) {
        if self.nodes[target.0].value.numel() == 1 && delta.len() > 1 {
            let total = delta.iter().fold(T::zero(), |acc, &d| acc + d);
            self.send(grads, target, vec![total]);
        } else {
            self.send(grads, target, delta);
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests;
