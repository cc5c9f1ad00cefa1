//! Reverse-mode differentiation over the operations in [`ops`](crate::ops).
//!
//! A [`GradTape`] is a Wengert list: every call appends one node holding its
//! forward value and whatever the backward rule needs. [`GradTape::backward`]
//! walks the list once in reverse.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::training::loss::{weighted_bce_backward, weighted_bce_forward, BceWeights};

/// Handle to a node on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param { key: usize },
    Conv2d { input: Var, weight: Var, bias: Var, dilation: usize, padding: usize },
    UpConv { input: Var, weight: Var, bias: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    Relu { input: Var },
    Sigmoid { input: Var },
    Concat { parts: Vec<Var> },
    Upsample { input: Var, factor: usize },
    WeightedBce { logits: Var, target: Tensor4<T>, weights: BceWeights },
    Sum { input: Var },
    Project { input: Var, weights: Tensor4<T> },
    WeightedSum { terms: Vec<(Var, f64)> },
}

struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients keyed by the `key` passed to [`GradTape::param`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    by_key: BTreeMap<usize, Tensor4<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, key: usize) -> Option<&Tensor4<T>> {
        self.by_key.get(&key)
    }

    pub fn take(&mut self, key: usize) -> Option<Tensor4<T>> {
        self.by_key.remove(&key)
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

/// Single-owner operation record.
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
    replayed: bool,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            replayed: false,
        }
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.replayed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A trainable leaf; its gradient is reported under `key`.
    pub fn param(&mut self, key: usize, value: Tensor4<T>) -> Var {
        self.push(value, Op::Param { key }, true)
    }

    /// Stride-1 dilated convolution; `bias` holds shape `(out, 1, 1, 1)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize, padding: usize) -> Result<Var> {
        let out = ops::conv::conv2d_raw(
            self.value(input),
            self.value(weight),
            self.value(bias).data(),
            dilation,
            padding,
        )?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
                padding,
            },
            rg,
        ))
    }

    /// Convolution padded to preserve spatial size (`p = r(k−1)/2`).
    pub fn conv2d_same(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let k = self.value(weight).h();
        self.conv2d(input, weight, bias, dilation, dilation * (k.saturating_sub(1)) / 2)
    }

    pub fn up_conv_2x2(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::upconv::up_conv_raw(self.value(input), self.value(weight), self.value(bias).data())?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::UpConv { input, weight, bias }, rg))
    }

    pub fn max_pool_2x2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool_2x2_with_argmax(self.value(input))?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = ops::sigmoid(self.value(input));
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor4<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_channels(&values)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, rg))
    }

    pub fn bilinear_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::bilinear_upsample(self.value(input), factor)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Upsample { input, factor }, rg))
    }

    /// Class-weighted sigmoid cross-entropy averaged over all pixels; see
    /// [`weighted_bce`](crate::training::loss::weighted_bce).
    pub fn weighted_bce(&mut self, logits: Var, target: &Tensor4<T>, weights: BceWeights) -> Result<Var> {
        let loss = weighted_bce_forward(self.value(logits), target, weights)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor4::scalar(T::from_f64_lossy(loss)),
            Op::WeightedBce {
                logits,
                target: target.clone(),
                weights,
            },
            rg,
        ))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = T::from_f64_lossy(self.value(input).sum());
        let rg = self.any_grad(&[input]);
        self.push(Tensor4::scalar(s), Op::Sum { input }, rg)
    }

    /// Inner product `Σ x·w` with a constant tensor, as a scalar node.
    pub fn project(&mut self, input: Var, weights: &Tensor4<T>) -> Result<Var> {
        let s = T::from_f64_lossy(self.value(input).dot(weights)?);
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Tensor4::scalar(s),
            Op::Project {
                input,
                weights: weights.clone(),
            },
            rg,
        ))
    }

    /// `Σ cᵢ·xᵢ` over same-shaped operands.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or(Error::Config("weighted_sum needs at least one term".into()))?;
        let mut acc = Tensor4::zeros(self.value(first).shape());
        for &(v, c) in terms {
            acc.add_assign(&self.value(v).scaled(T::from_f64_lossy(c)))?;
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&vars);
        Ok(self.push(acc, Op::WeightedSum { terms: terms.to_vec() }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss` node seeded with `seed`.
    ///
    /// Every parameter leaf on the tape gets an entry; leaves the loss does
    /// not depend on get zeros. A tape can be replayed only once per
    /// [`reset`](Self::reset).
    pub fn backward(&mut self, loss: Var, seed: T) -> Result<Gradients<T>> {
        if self.replayed {
            return Err(Error::TapeReplayed);
        }
        let shape = self.value(loss).shape();
        if shape != [1, 1, 1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        self.replayed = true;

        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::scalar(seed));
        let mut out = Gradients::default();

        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if let Op::Param { key } = node.op {
                let g = grads[i].take().unwrap_or_else(|| Tensor4::zeros(node.value.shape()));
                match out.by_key.get_mut(&key) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        out.by_key.insert(key, g);
                    }
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].requires_grad;
            let mut emit = |v: Var, t: Tensor4<T>| -> Result<()> {
                if !nodes[v.0].requires_grad {
                    return Ok(());
                }
                match grads[v.0].as_mut() {
                    Some(acc) => acc.add_assign(&t),
                    None => {
                        grads[v.0] = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Constant | Op::Param { .. } => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    dilation,
                    padding,
                } => {
                    let cg = ops::conv2d_backward(val(*input), val(*weight), *dilation, *padding, &g, wants(*input))?;
                    if let Some(dx) = cg.input {
                        emit(*input, dx)?;
                    }
                    emit(*weight, cg.weight)?;
                    emit(*bias, Tensor4::new(val(*bias).shape(), cg.bias)?)?;
                }
                Op::UpConv { input, weight, bias } => {
                    let (dx, dw, db) = ops::up_conv_2x2_backward(val(*input), val(*weight), &g)?;
                    emit(*input, dx)?;
                    emit(*weight, dw)?;
                    emit(*bias, Tensor4::new(val(*bias).shape(), db)?)?;
                }
                Op::MaxPool { input, argmax } => {
                    emit(*input, ops::max_pool_2x2_backward(val(*input).shape(), argmax, &g)?)?;
                }
                Op::Relu { input } => {
                    emit(*input, ops::relu_backward(val(*input), &g)?)?;
                }
                Op::Sigmoid { input } => {
                    emit(*input, ops::sigmoid_backward(&node.value, &g)?)?;
                }
                Op::Concat { parts } => {
                    let widths: Vec<usize> = parts.iter().map(|&p| val(p).c()).collect();
                    for (&p, part) in parts.iter().zip(ops::split_channels(&g, &widths)?) {
                        emit(p, part)?;
                    }
                }
                Op::Upsample { input, factor } => {
                    emit(*input, ops::bilinear_upsample_backward(val(*input).shape(), *factor, &g)?)?;
                }
                Op::WeightedBce { logits, target, weights } => {
                    let upstream = g.data()[0];
                    emit(*logits, weighted_bce_backward(val(*logits), target, *weights, upstream)?)?;
                }
                Op::Sum { input } => {
                    emit(*input, Tensor4::full(val(*input).shape(), g.data()[0]))?;
                }
                Op::Project { input, weights } => {
                    emit(*input, weights.scaled(g.data()[0]))?;
                }
                Op::WeightedSum { terms } => {
                    for &(v, c) in terms {
                        emit(v, g.scaled(T::from_f64_lossy(c)))?;
                    }
                }
            }
        }
        Ok(out)
    }
}
