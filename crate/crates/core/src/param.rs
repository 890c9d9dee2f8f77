//! Trainable parameters, Xavier initialisation and the plain SGD update.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named tensor with a gradient accumulator of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { name: name.into(), value, grad }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Replaces the value; the shape must not change.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("`{}` is {:?}, got {:?}", self.name, self.value.shape(), value.shape()),
            ));
        }
        self.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self) -> &mut [T] {
        self.value.data_mut()
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.axpy(T::one(), g)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Registers every parameter on the graph; gradients flow to them only when `trainable`.
pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &[Parameter<T>], trainable: bool) -> Vec<Var> {
    params.iter().map(|p| g.parameter(p, trainable)).collect()
}

/// `p <- p - lr * grad(p)`, then zeroes every accumulator.
pub fn sgd_step<T: Scalar>(params: &mut [Parameter<T>], lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    let lr = T::from_f64_lossy(lr);
    for p in params {
        for (v, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}

/// Glorot-uniform weights on `±sqrt(6 / (fan_in + fan_out))`.
///
/// Samples are drawn in `f64` and rounded to `T`, so `f32` and `f64` models built
/// from one seed agree to `f32` precision.
pub fn xavier_init<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::invalid(format!("xavier fans must be positive, got {fan_in}/{fan_out}")));
    }
    let bound = xavier_bound(fan_in, fan_out);
    Ok(Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.gen_range(-bound..=bound))))
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn param_count<T: Scalar>(params: &[Parameter<T>]) -> usize {
    params.iter().map(Parameter::len).sum()
}
