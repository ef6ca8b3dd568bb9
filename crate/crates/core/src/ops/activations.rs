//! Elementwise nonlinearities and the stabilized softmax.

use crate::error::{Error, Result};
use crate::ops::Layer;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Relu<T: Scalar> {
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { cached_input: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.cached_input = Some(input.clone());
        Ok(input.map(|x| if x > T::zero() { x } else { T::zero() }))
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::InvalidInput("relu backward before forward".into()))?;
        if upstream.shape() != input.shape() {
            return Err(Error::ShapeMismatch("relu upstream shape".into()));
        }
        let mut d = upstream.clone();
        for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
            if x <= T::zero() {
                *g = T::zero();
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T: Scalar> {
    cached_output: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Sigmoid {
            cached_output: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = input.map(|x| T::one() / (T::one() + (-x).exp()));
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self
            .cached_output
            .take()
            .ok_or_else(|| Error::InvalidInput("sigmoid backward before forward".into()))?;
        let mut d = upstream.clone();
        for (g, &y) in d.data_mut().iter_mut().zip(out.data()) {
            *g *= y * (T::one() - y);
        }
        Ok(d)
    }
}

/// Softmax along `axis`, subtract-max stabilized. Outputs are positive and
/// sum to 1 along the axis.
pub fn softmax_axis<T: Scalar>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= input.rank() {
        return Err(Error::InvalidInput(format!(
            "softmax axis {axis} out of range for rank {}",
            input.rank()
        )));
    }
    let shape = input.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = input.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = data[base];
            for a in 1..axis_len {
                let v = data[base + a * inner];
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for a in 0..axis_len {
                let idx = base + a * inner;
                let e = (data[idx] - max).exp();
                data[idx] = e;
                sum += e;
            }
            for a in 0..axis_len {
                data[base + a * inner] /= sum;
            }
        }
    }
    Ok(out)
}

/// Softmax as a differentiable layer over a fixed axis.
#[derive(Debug, Clone)]
pub struct Softmax<T: Scalar> {
    axis: usize,
    cached_output: Option<Tensor<T>>,
}

impl<T: Scalar> Softmax<T> {
    pub fn new(axis: usize) -> Self {
        Softmax {
            axis,
            cached_output: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Softmax<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = softmax_axis(input, self.axis)?;
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .cached_output
            .take()
            .ok_or_else(|| Error::InvalidInput("softmax backward before forward".into()))?;
        if upstream.shape() != y.shape() {
            return Err(Error::ShapeMismatch("softmax upstream shape".into()));
        }
        let shape = y.shape();
        let axis_len = shape[self.axis];
        let inner: usize = shape[self.axis + 1..].iter().product();
        let outer: usize = shape[..self.axis].iter().product();
        let mut d = Tensor::zeros(shape);
        let yd = y.data();
        let ud = upstream.data();
        let dd = d.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut dot = T::zero();
                for a in 0..axis_len {
                    let idx = base + a * inner;
                    dot += ud[idx] * yd[idx];
                }
                for a in 0..axis_len {
                    let idx = base + a * inner;
                    dd[idx] = yd[idx] * (ud[idx] - dot);
                }
            }
        }
        Ok(d)
    }
}
