//! Stateful wrappers that pair each kernel with its backward pass.
//!
//! `forward` records what `backward` needs; calling `backward` on an op that
//! has not been evaluated is a usage error. The network itself calls the
//! kernels directly with its own caches, these wrappers are the op-level
//! surface used by gradient checks and external callers.

use super::kernels::*;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub trait Op<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Number of inputs `forward` expects.
    fn arity(&self) -> usize;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Gradients for every input of the last `forward`, in input order.
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
}

fn check_arity<T: Scalar>(op: &dyn Op<T>, inputs: &[&Tensor<T>]) -> Result<()> {
    if inputs.len() != op.arity() {
        return Err(Error::Usage(format!(
            "{} takes {} inputs, got {}",
            op.name(),
            op.arity(),
            inputs.len()
        )));
    }
    Ok(())
}

fn missing(name: &str) -> Error {
    Error::Usage(format!("{name}: backward called without a recorded forward"))
}

fn owned<T: Scalar>(inputs: &[&Tensor<T>]) -> Vec<Tensor<T>> {
    inputs.iter().map(|t| (*t).clone()).collect()
}

#[derive(Default)]
pub struct MatMulOp<T: Scalar> {
    saved: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> Op<T> for MatMulOp<T> {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn arity(&self) -> usize {
        2
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        let y = matmul(inputs[0], inputs[1])?;
        self.saved = Some(owned(inputs));
        Ok(y)
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = self.saved.as_ref().ok_or_else(|| missing(self.name()))?;
        let (da, db) = matmul_backward(&s[0], &s[1], upstream)?;
        Ok(vec![da, db])
    }
}

pub struct SoftmaxOp<T: Scalar> {
    pub axis: usize,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> SoftmaxOp<T> {
    pub fn new(axis: usize) -> Self {
        Self { axis, output: None }
    }
}

impl<T: Scalar> Op<T> for SoftmaxOp<T> {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn arity(&self) -> usize {
        1
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        let y = softmax(inputs[0], self.axis)?;
        self.output = Some(y.clone());
        Ok(y)
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let y = self.output.as_ref().ok_or_else(|| missing(self.name()))?;
        Ok(vec![softmax_backward(y, upstream, self.axis)?])
    }
}

/// Inputs: `x, gamma, beta`.
pub struct LayerNormOp<T: Scalar> {
    pub eps: T,
    saved: Option<(LayerNormCache<T>, Tensor<T>)>,
}

impl<T: Scalar> Default for LayerNormOp<T> {
    fn default() -> Self {
        Self {
            eps: T::of(LAYERNORM_EPS),
            saved: None,
        }
    }
}

impl<T: Scalar> Op<T> for LayerNormOp<T> {
    fn name(&self) -> &'static str {
        "layernorm"
    }
    fn arity(&self) -> usize {
        3
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        let (y, cache) = layernorm(inputs[0], inputs[1], inputs[2], self.eps)?;
        self.saved = Some((cache, inputs[1].clone()));
        Ok(y)
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (cache, gamma) = self.saved.as_ref().ok_or_else(|| missing(self.name()))?;
        let (dx, dg, db) = layernorm_backward(cache, gamma, upstream)?;
        Ok(vec![dx, dg, db])
    }
}

/// Inputs: `x, weight, bias`.
pub struct Conv2dOp<T: Scalar> {
    pub stride: usize,
    pub pad: usize,
    saved: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> Conv2dOp<T> {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad,
            saved: None,
        }
    }
}

impl<T: Scalar> Op<T> for Conv2dOp<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn arity(&self) -> usize {
        3
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        let y = conv2d(inputs[0], inputs[1], inputs[2], self.stride, self.pad)?;
        self.saved = Some(owned(&inputs[..2]));
        Ok(y)
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = self.saved.as_ref().ok_or_else(|| missing(self.name()))?;
        let (dx, params) = conv2d_backward(&s[0], &s[1], upstream, self.stride, self.pad, true)?;
        let (dw, db) = params.expect("weight grads requested");
        Ok(vec![dx, dw, db])
    }
}

#[derive(Default)]
pub struct GeluOp<T: Scalar> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Op<T> for GeluOp<T> {
    fn name(&self) -> &'static str {
        "gelu"
    }
    fn arity(&self) -> usize {
        1
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        self.input = Some(inputs[0].clone());
        Ok(gelu(inputs[0]))
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let x = self.input.as_ref().ok_or_else(|| missing(self.name()))?;
        Ok(vec![gelu_backward(x, upstream)?])
    }
}

#[derive(Default)]
pub struct SigmoidOp<T: Scalar> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Op<T> for SigmoidOp<T> {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn arity(&self) -> usize {
        1
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        let y = sigmoid(inputs[0]);
        self.output = Some(y.clone());
        Ok(y)
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let y = self.output.as_ref().ok_or_else(|| missing(self.name()))?;
        Ok(vec![sigmoid_backward(y, upstream)?])
    }
}

/// Inputs: `x, weight, bias`.
#[derive(Default)]
pub struct LinearOp<T: Scalar> {
    saved: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> Op<T> for LinearOp<T> {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn arity(&self) -> usize {
        3
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        let y = linear(inputs[0], inputs[1], inputs[2])?;
        self.saved = Some(owned(&inputs[..2]));
        Ok(y)
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = self.saved.as_ref().ok_or_else(|| missing(self.name()))?;
        let (dx, dw, db) = linear_backward(&s[0], &s[1], upstream)?;
        Ok(vec![dx, dw, db])
    }
}

/// Inputs: `x, w1, b1, w2, b2`.
#[derive(Default)]
pub struct MlpOp<T: Scalar> {
    saved: Option<(MlpCache<T>, Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Op<T> for MlpOp<T> {
    fn name(&self) -> &'static str {
        "mlp"
    }
    fn arity(&self) -> usize {
        5
    }
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        check_arity(self, inputs)?;
        let (y, cache) = mlp(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4])?;
        self.saved = Some((cache, inputs[1].clone(), inputs[3].clone()));
        Ok(y)
    }
    fn backward(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (cache, w1, w2) = self.saved.as_ref().ok_or_else(|| missing(self.name()))?;
        let g = mlp_backward(cache, w1, w2, upstream)?;
        Ok(vec![g.dx, g.dw1, g.db1, g.dw2, g.db2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_without_forward_is_usage_error() {
        let ops: Vec<Box<dyn Op<f64>>> = vec![
            Box::new(MatMulOp::default()),
            Box::new(SoftmaxOp::new(0)),
            Box::new(LayerNormOp::default()),
            Box::new(Conv2dOp::new(1, 1)),
            Box::new(GeluOp::default()),
            Box::new(SigmoidOp::default()),
            Box::new(LinearOp::default()),
            Box::new(MlpOp::default()),
        ];
        for op in &ops {
            assert!(
                matches!(op.backward(&Tensor::zeros([1])), Err(Error::Usage(_))),
                "{}",
                op.name()
            );
        }
    }

    #[test]
    fn arity_is_checked() {
        let mut op = MatMulOp::<f64>::default();
        let a = Tensor::zeros([2, 2]);
        assert!(matches!(op.forward(&[&a]), Err(Error::Usage(_))));
    }
}
