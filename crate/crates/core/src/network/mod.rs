//! Layers, networks and the ordinary training loop.
//!
//! A [`Network`] is a flat list of layers whose last entry is a
//! [`Layer::SoftmaxHead`] (one affine map followed by softmax). Everything
//! before `head_index` is the feature extractor.

mod arch;
pub mod checkpoint;
mod init;
mod optim;
mod train;

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{kernels, GradTape, Scalar, Tensor, Var};

pub use arch::Architecture;
pub use init::{init_head, init_params, InitScheme};
pub use optim::{Optimizer, OptimizerState};
pub use train::{evaluate, fit, train, EpochStats, Evaluation, FitOptions, Scorer, TrainConfig, TrainLog, EVAL_BATCH};

/// The final classifier: `softmax(x·weight + bias)` with `weight[d×K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, k) = weight.dims2("head")?;
        if bias.shape() != [k] {
            return Err(Error::ShapeMismatch {
                op: "head",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[features, classes]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Class probabilities for a batch of features (any trailing shape is
    /// flattened).
    pub fn probs(&self, features: Tensor<T>) -> Result<Tensor<T>> {
        let x = features.flatten_rows();
        let logits = kernels::add_bias(&kernels::matmul(&x, &self.weight)?, &self.bias)?;
        kernels::softmax(&logits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense = 0,
    Conv = 1,
    Relu = 2,
    MaxPool = 3,
    Flatten = 4,
    Residual = 5,
    SoftmaxHead = 6,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "max_pool",
            LayerKind::Flatten => "flatten",
            LayerKind::Residual => "residual_block",
            LayerKind::SoftmaxHead => "softmax_head",
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => LayerKind::Dense,
            1 => LayerKind::Conv,
            2 => LayerKind::Relu,
            3 => LayerKind::MaxPool,
            4 => LayerKind::Flatten,
            5 => LayerKind::Residual,
            6 => LayerKind::SoftmaxHead,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T: Scalar = f32> {
    /// `x[N×in]·weight[in×out] + bias[out]`.
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    /// Bias-free convolution, `kernel[F×C×kh×kw]`.
    Conv {
        kernel: Tensor<T>,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    /// `relu(x + conv(relu(conv(x, first)), second))`, both kernels
    /// `[C×C×k×k]` with odd `k`, stride 1 and padding `k/2`.
    Residual {
        first: Tensor<T>,
        second: Tensor<T>,
    },
    SoftmaxHead(Head<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Layer::Dense {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Layer::Conv {
            kernel: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            stride,
            padding,
        }
    }

    pub fn residual(channels: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidShape {
                op: "residual_block",
                detail: format!("kernel size must be odd to preserve shape, got {kernel}"),
            });
        }
        Ok(Layer::Residual {
            first: Tensor::zeros(&[channels, channels, kernel, kernel]),
            second: Tensor::zeros(&[channels, channels, kernel, kernel]),
        })
    }

    pub fn head(features: usize, classes: usize) -> Self {
        Layer::SoftmaxHead(Head::zeros(features, classes))
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv { .. } => LayerKind::Conv,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool { .. } => LayerKind::MaxPool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Residual { .. } => LayerKind::Residual,
            Layer::SoftmaxHead(_) => LayerKind::SoftmaxHead,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv { kernel, .. } => vec![kernel],
            Layer::Residual { first, second } => vec![first, second],
            Layer::SoftmaxHead(h) => vec![&h.weight, &h.bias],
            Layer::Relu | Layer::MaxPool { .. } | Layer::Flatten => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv { kernel, .. } => vec![kernel],
            Layer::Residual { first, second } => vec![first, second],
            Layer::SoftmaxHead(h) => vec![&mut h.weight, &mut h.bias],
            Layer::Relu | Layer::MaxPool { .. } | Layer::Flatten => vec![],
        }
    }

    /// Kind-specific integer hyperparameters, in checkpoint order.
    pub fn hyperparams(&self) -> Vec<u32> {
        let d = |t: &Tensor<T>, i: usize| t.shape()[i] as u32;
        match self {
            Layer::Dense { weight, .. } => vec![d(weight, 0), d(weight, 1)],
            Layer::Conv {
                kernel,
                stride,
                padding,
            } => vec![
                d(kernel, 1),
                d(kernel, 0),
                d(kernel, 2),
                d(kernel, 3),
                *stride as u32,
                *padding as u32,
            ],
            Layer::MaxPool { window, stride } => vec![*window as u32, *stride as u32],
            Layer::Residual { first, .. } => vec![d(first, 0), d(first, 2)],
            Layer::SoftmaxHead(h) => vec![d(&h.weight, 0), d(&h.weight, 1)],
            Layer::Relu | Layer::Flatten => vec![],
        }
    }

    /// Output shape for a full batch input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let probe = |op: &'static str, detail: String| Error::InvalidShape { op, detail };
        match self {
            Layer::Dense { weight, .. } => match input {
                [n, d] if *d == weight.shape()[0] => Ok(vec![*n, weight.shape()[1]]),
                _ => Err(Error::ShapeMismatch {
                    op: "dense",
                    lhs: input.to_vec(),
                    rhs: weight.shape().to_vec(),
                }),
            },
            Layer::Conv {
                kernel,
                stride,
                padding,
            } => {
                let (f, c, kh, kw) = (
                    kernel.shape()[0],
                    kernel.shape()[1],
                    kernel.shape()[2],
                    kernel.shape()[3],
                );
                match input {
                    [n, ci, h, w] if *ci == c && h + 2 * padding >= kh && w + 2 * padding >= kw && *stride > 0 => {
                        Ok(vec![
                            *n,
                            f,
                            (h + 2 * padding - kh) / stride + 1,
                            (w + 2 * padding - kw) / stride + 1,
                        ])
                    }
                    _ => Err(Error::ShapeMismatch {
                        op: "conv2d",
                        lhs: input.to_vec(),
                        rhs: kernel.shape().to_vec(),
                    }),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { window, stride } => match input {
                [n, c, h, w] if window <= h && window <= w && *window > 0 && *stride > 0 => {
                    Ok(vec![*n, *c, (h - window) / stride + 1, (w - window) / stride + 1])
                }
                _ => Err(probe("max_pool2d", format!("window {window} on input {input:?}"))),
            },
            Layer::Flatten => Ok(vec![input[0], input[1..].iter().product()]),
            Layer::Residual { first, .. } => match input {
                [_, c, _, _] if *c == first.shape()[0] => Ok(input.to_vec()),
                _ => Err(Error::ShapeMismatch {
                    op: "residual_block",
                    lhs: input.to_vec(),
                    rhs: first.shape().to_vec(),
                }),
            },
            Layer::SoftmaxHead(h) => {
                let d: usize = input[1..].iter().product();
                if d != h.in_features() {
                    return Err(Error::ShapeMismatch {
                        op: "softmax_head",
                        lhs: input.to_vec(),
                        rhs: h.weight.shape().to_vec(),
                    });
                }
                Ok(vec![input[0], h.num_classes()])
            }
        }
    }

    pub fn forward(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } => kernels::add_bias(&kernels::matmul(&x, weight)?, bias),
            Layer::Conv {
                kernel,
                stride,
                padding,
            } => kernels::conv2d(&x, kernel, *stride, *padding),
            Layer::Relu => Ok(kernels::relu(&x)),
            Layer::MaxPool { window, stride } => Ok(kernels::max_pool2d(&x, *window, *stride)?.0),
            Layer::Flatten => Ok(x.flatten_rows()),
            Layer::Residual { first, second } => {
                let pad = first.shape()[2] / 2;
                let h = kernels::relu(&kernels::conv2d(&x, first, 1, pad)?);
                let y = kernels::conv2d(&h, second, 1, pad)?;
                Ok(kernels::relu(&kernels::add(&x, &y)?))
            }
            Layer::SoftmaxHead(h) => h.probs(x),
        }
    }

    /// Same computation as [`Layer::forward`], recorded on `tape`. `params`
    /// are this layer's parameter variables in [`Layer::params`] order.
    pub fn forward_taped(&self, tape: &mut GradTape<T>, x: Var, params: &[Var]) -> Result<Var> {
        match self {
            Layer::Dense { .. } => {
                let y = tape.matmul(x, params[0])?;
                tape.add_bias(y, params[1])
            }
            Layer::Conv { stride, padding, .. } => tape.conv2d(x, params[0], *stride, *padding),
            Layer::Relu => tape.relu(x),
            Layer::MaxPool { window, stride } => tape.max_pool2d(x, *window, *stride),
            Layer::Flatten => tape.flatten_rows(x),
            Layer::Residual { first, .. } => {
                let pad = first.shape()[2] / 2;
                let h = tape.conv2d(x, params[0], 1, pad)?;
                let h = tape.relu(h)?;
                let y = tape.conv2d(h, params[1], 1, pad)?;
                let s = tape.add(x, y)?;
                tape.relu(s)
            }
            Layer::SoftmaxHead(_) => {
                let x = tape.flatten_rows(x)?;
                let y = tape.matmul(x, params[0])?;
                let y = tape.add_bias(y, params[1])?;
                tape.softmax(y)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    layers: Vec<Layer<T>>,
    head_index: usize,
}

impl<T: Scalar> Network<T> {
    /// The head must be the last layer and the only softmax head.
    pub fn new(layers: Vec<Layer<T>>, head_index: usize) -> Result<Self> {
        let heads = layers.iter().filter(|l| l.kind() == LayerKind::SoftmaxHead).count();
        if layers.is_empty() || head_index != layers.len() - 1 || heads != 1 {
            return Err(Error::InvalidShape {
                op: "network",
                detail: format!(
                    "head_index {head_index} must point at the single softmax head, which must be the last of {} layers",
                    layers.len()
                ),
            });
        }
        match &layers[head_index] {
            Layer::SoftmaxHead(h) if h.num_classes() >= 2 => {}
            _ => {
                return Err(Error::InvalidShape {
                    op: "network",
                    detail: "head needs at least 2 classes".into(),
                })
            }
        }
        Ok(Self { layers, head_index })
    }

    /// Appends a head and places the boundary in front of it.
    pub fn with_head(mut extractor: Vec<Layer<T>>, head: Head<T>) -> Result<Self> {
        let idx = extractor.len();
        extractor.push(Layer::SoftmaxHead(head));
        Self::new(extractor, idx)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn head_index(&self) -> usize {
        self.head_index
    }

    pub fn extractor(&self) -> &[Layer<T>] {
        &self.layers[..self.head_index]
    }

    pub fn head(&self) -> &Head<T> {
        match &self.layers[self.head_index] {
            Layer::SoftmaxHead(h) => h,
            _ => unreachable!("validated at construction"),
        }
    }

    pub(crate) fn head_mut(&mut self) -> &mut Head<T> {
        match &mut self.layers[self.head_index] {
            Layer::SoftmaxHead(h) => h,
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head().num_classes()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Runs `layers[range]` on `x`. Errors name the failing layer.
    pub fn forward_range(&self, mut x: Tensor<T>, range: Range<usize>) -> Result<Tensor<T>> {
        for i in range {
            let layer = &self.layers[i];
            x = layer.forward(x).map_err(|e| e.at_layer(i, layer.kind().name()))?;
        }
        Ok(x)
    }

    /// Class probabilities.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_range(batch.clone(), 0..self.layers.len())
    }

    /// Every layer's output in order; the last entry equals [`Network::forward`].
    pub fn forward_trace(&self, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(x).map_err(|e| e.at_layer(i, layer.kind().name()))?;
            out.push(x.clone());
        }
        Ok(out)
    }

    /// Records the full forward pass on `tape`, registering every parameter.
    /// Returns the probability node and the parameter variables in
    /// [`Network::params`] order.
    pub fn forward_taped(&self, tape: &mut GradTape<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut all = Vec::new();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let vars: Vec<Var> = layer.params().into_iter().map(|p| tape.param(p.clone())).collect();
            h = layer
                .forward_taped(tape, h, &vars)
                .map_err(|e| e.at_layer(i, layer.kind().name()))?;
            all.extend(vars);
        }
        Ok((h, all))
    }

    /// Per-layer output shapes for a batch input shape.
    pub fn output_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shape = input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| e.at_layer(i, layer.kind().name()))?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense { weight, bias } => Layer::Dense {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                Layer::Conv {
                    kernel,
                    stride,
                    padding,
                } => Layer::Conv {
                    kernel: kernel.cast(),
                    stride: *stride,
                    padding: *padding,
                },
                Layer::Relu => Layer::Relu,
                Layer::MaxPool { window, stride } => Layer::MaxPool {
                    window: *window,
                    stride: *stride,
                },
                Layer::Flatten => Layer::Flatten,
                Layer::Residual { first, second } => Layer::Residual {
                    first: first.cast(),
                    second: second.cast(),
                },
                Layer::SoftmaxHead(h) => Layer::SoftmaxHead(Head {
                    weight: h.weight.cast(),
                    bias: h.bias.cast(),
                }),
            })
            .collect();
        Network {
            layers,
            head_index: self.head_index,
        }
    }
}
