use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

/// A single stage of a sequential network. Parameter shapes are fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T: Scalar = f32> {
    /// `[B, in] · [in, out] + bias[out]`
    Dense { weight: Tensor<T>, bias: Tensor<T> },
    /// Weight `[F, C, k, k]`, bias `[F]`.
    Conv {
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        pad: usize,
    },
    /// Weight `[C, F, k, k]`, bias `[F]`.
    ConvTranspose {
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        pad: usize,
    },
    /// Reshapes each sample to `shape` (batch axis preserved).
    Reshape { shape: Vec<usize> },
    Flatten,
    Activation(Activation),
}

fn param<T: Scalar>(shape: &[usize]) -> Result<Tensor<T>> {
    Ok(Tensor::zeros(shape.to_vec())?.with_requires_grad(true))
}

impl<T: Scalar> Layer<T> {
    pub fn dense(inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Layer::Dense {
            weight: param(&[inputs, outputs])?,
            bias: param(&[outputs])?,
        })
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        Ok(Layer::Conv {
            weight: param(&[out_channels, in_channels, kernel, kernel])?,
            bias: param(&[out_channels])?,
            stride,
            pad,
        })
    }

    pub fn conv_transpose(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        Ok(Layer::ConvTranspose {
            weight: param(&[in_channels, out_channels, kernel, kernel])?,
            bias: param(&[out_channels])?,
            stride,
            pad,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv { .. } => "conv",
            Layer::ConvTranspose { .. } => "tconv",
            Layer::Reshape { .. } => "reshape",
            Layer::Flatten => "flatten",
            Layer::Activation(_) => "activation",
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Dense { weight, bias }
            | Layer::Conv { weight, bias, .. }
            | Layer::ConvTranspose { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Dense { weight, bias }
            | Layer::Conv { weight, bias, .. }
            | Layer::ConvTranspose { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            op: self.kind(),
            lhs: input.to_vec(),
            rhs: expected,
        };
        match self {
            Layer::Dense { weight, .. } => {
                let s = weight.shape();
                if input != [s[0]] {
                    return Err(mismatch(vec![s[0]]));
                }
                Ok(vec![s[1]])
            }
            Layer::Conv {
                weight, stride, pad, ..
            } => {
                let s = weight.shape();
                if input.len() != 3 || input[0] != s[1] {
                    return Err(mismatch(s.to_vec()));
                }
                let g = crate::autodiff::ConvGeometry::new(input[0], input[1], input[2], s[2], *stride, *pad)?;
                Ok(vec![s[0], g.out_height, g.out_width])
            }
            Layer::ConvTranspose {
                weight, stride, pad, ..
            } => {
                let s = weight.shape();
                if input.len() != 3 || input[0] != s[0] {
                    return Err(mismatch(s.to_vec()));
                }
                let g = crate::autodiff::ConvGeometry::for_transposed(s[1], input[1], input[2], s[2], *stride, *pad)?;
                Ok(vec![s[1], g.height, g.width])
            }
            Layer::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(mismatch(shape.clone()));
                }
                Ok(shape.clone())
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Activation(_) => Ok(input.to_vec()),
        }
    }

    /// Applies the layer; `params` holds this layer's bound parameters in [`params`](Self::params) order.
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        let batch = g.value(x).shape()[0];
        match self {
            Layer::Dense { .. } => {
                let y = g.matmul(x, params[0])?;
                g.bias_add(y, params[1])
            }
            Layer::Conv { stride, pad, .. } => {
                let y = g.conv2d(x, params[0], *stride, *pad)?;
                g.bias_add(y, params[1])
            }
            Layer::ConvTranspose { stride, pad, .. } => {
                let y = g.conv_transpose2d(x, params[0], *stride, *pad)?;
                g.bias_add(y, params[1])
            }
            Layer::Reshape { shape } => {
                let mut full = vec![batch];
                full.extend_from_slice(shape);
                g.reshape(x, full)
            }
            Layer::Flatten => {
                let inner: usize = g.value(x).shape()[1..].iter().product();
                g.reshape(x, [batch, inner])
            }
            Layer::Activation(a) => Ok(match *a {
                Activation::Relu => g.relu(x),
                Activation::LeakyRelu(slope) => g.leaky_relu(x, T::cast(slope)),
                Activation::Tanh => g.tanh(x),
                Activation::Sigmoid => g.sigmoid(x),
            }),
        }
    }
}
