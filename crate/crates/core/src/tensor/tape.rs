use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::{kernels, Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Relu(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Reshape(usize),
    Softmax(usize),
    CrossEntropy {
        probs: usize,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications in execution order. Single-threaded; build
/// one tape per forward/backward pass.
#[derive(Debug)]
pub struct GradTape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradient accumulators produced by [`GradTape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`; `None` when the loss does not depend on it or it
    /// was recorded as a constant.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
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
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape(format!("variable {} is not on this tape", v.index)));
        }
        Ok(v.index)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.index].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::matmul(&self.nodes[a].value, &self.nodes[b].value)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.idx(x)?, self.idx(bias)?);
        let out = kernels::add_bias(&self.nodes[x].value, &self.nodes[b].value)?;
        let rg = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::add(&self.nodes[a].value, &self.nodes[b].value)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::mul(&self.nodes[a].value, &self.nodes[b].value)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let x = self.idx(x)?;
        let out = kernels::scale(&self.nodes[x].value, c);
        let rg = self.needs(x);
        Ok(self.push(out, Op::Scale(x, c), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let out = Tensor::scalar(kernels::sum(&self.nodes[x].value));
        let rg = self.needs(x);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let out = kernels::relu(&self.nodes[x].value);
        let rg = self.needs(x);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (i, k) = (self.idx(input)?, self.idx(kernel)?);
        let out = kernels::conv2d(&self.nodes[i].value, &self.nodes[k].value, stride, padding)?;
        let rg = self.needs(i) || self.needs(k);
        Ok(self.push(
            out,
            Op::Conv2d {
                input: i,
                kernel: k,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let i = self.idx(input)?;
        let (out, argmax) = kernels::max_pool2d(&self.nodes[i].value, window, stride)?;
        let rg = self.needs(i);
        Ok(self.push(out, Op::MaxPool { input: i, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let x = self.idx(x)?;
        let out = self.nodes[x].value.clone().reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn flatten_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let (n, d) = (shape[0], self.value(x).row_len());
        self.reshape(x, &[n, d])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let out = kernels::softmax(&self.nodes[x].value)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let p = self.idx(probs)?;
        let loss = kernels::cross_entropy(&self.nodes[p].value, labels)?;
        let rg = self.needs(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs: p,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Propagates d(loss)/d(node) to every node in strict reverse recording
    /// order. Gradients from multiple use sites are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.idx(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape(), T::one()));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            let val = |j: usize| &self.nodes[j].value;
            let mut contribs: Vec<(usize, Tensor<T>)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(val(*a), val(*b), &g, self.needs(*a), self.needs(*b));
                    contribs.extend(ga.map(|t| (*a, t)));
                    contribs.extend(gb.map(|t| (*b, t)));
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        contribs.push((*b, kernels::add_bias_backward(&g)));
                    }
                    if self.needs(*x) {
                        contribs.push((*x, g.clone()));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        contribs.push((*a, g.clone()));
                    }
                    if self.needs(*b) {
                        contribs.push((*b, g.clone()));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        contribs.push((*a, kernels::mul(&g, val(*b))?));
                    }
                    if self.needs(*b) {
                        contribs.push((*b, kernels::mul(&g, val(*a))?));
                    }
                }
                Op::Scale(x, c) => contribs.push((*x, kernels::scale(&g, *c))),
                Op::Sum(x) => contribs.push((*x, Tensor::full(val(*x).shape(), g.data()[0]))),
                Op::Relu(x) => contribs.push((*x, kernels::relu_backward(val(*x), &g))),
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (gi, gk) = kernels::conv2d_backward(
                        val(*input),
                        val(*kernel),
                        *stride,
                        *padding,
                        &g,
                        self.needs(*input),
                        self.needs(*kernel),
                    )?;
                    contribs.extend(gi.map(|t| (*input, t)));
                    contribs.extend(gk.map(|t| (*kernel, t)));
                }
                Op::MaxPool { input, argmax } => {
                    contribs.push((*input, kernels::max_pool2d_backward(val(*input).shape(), argmax, &g)))
                }
                Op::Reshape(x) => contribs.push((*x, g.clone().reshape(val(*x).shape())?)),
                Op::Softmax(x) => contribs.push((*x, kernels::softmax_backward(&node.value, &g))),
                Op::CrossEntropy { probs, labels } => contribs.push((
                    *probs,
                    kernels::cross_entropy_backward(val(*probs), labels, g.data()[0]),
                )),
            }
            grads[i] = Some(g);
            for (j, t) in contribs {
                match grads[j].as_mut() {
                    Some(acc) => acc.add_assign(&t)?,
                    None => grads[j] = Some(t),
                }
            }
        }
        // Constants keep no gradient.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}
