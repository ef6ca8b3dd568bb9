//! Fully connected layer over 1-D tensors.

use crate::error::{Error, Result};
use crate::ops::{Layer, Param};
use crate::rng::{fill_he, Prng};
use crate::tensor::{Scalar, Tensor};

/// `output = weight · input + bias`, weight is M×N.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Prng) -> Self {
        let mut weight = Tensor::zeros(&[out_dim, in_dim]);
        fill_he(&mut weight, in_dim, rng);
        Linear {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            cached_input: None,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Linear {
            weight: Param::new("linear.weight", weight),
            bias: Param::new("linear.bias", bias),
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.rank() != 1 || input.len() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {}-vector, got shape {:?}",
                self.in_dim(),
                input.shape()
            )));
        }
        let (m, n) = (self.out_dim(), self.in_dim());
        let w = self.weight.value.data();
        let x = input.data();
        let mut out = self.bias.value.clone();
        let odata = out.data_mut();
        for i in 0..m {
            let row = &w[i * n..(i + 1) * n];
            let mut acc = T::zero();
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            odata[i] += acc;
        }
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::InvalidInput("linear backward before forward".into()))?;
        let (m, n) = (self.out_dim(), self.in_dim());
        if upstream.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "linear upstream has {} elements, expected {m}",
                upstream.len()
            )));
        }
        let x = input.data();
        let up = upstream.data();
        let wgrad = self.weight.grad.data_mut();
        for i in 0..m {
            let u = up[i];
            if u != T::zero() {
                let row = &mut wgrad[i * n..(i + 1) * n];
                for (g, &xv) in row.iter_mut().zip(x) {
                    *g += u * xv;
                }
            }
            self.bias.grad.data_mut()[i] += u;
        }
        let w = self.weight.value.data();
        let mut dinput = Tensor::zeros(&[n]);
        let din = dinput.data_mut();
        for i in 0..m {
            let u = up[i];
            if u != T::zero() {
                let row = &w[i * n..(i + 1) * n];
                for (d, &wv) in din.iter_mut().zip(row) {
                    *d += u * wv;
                }
            }
        }
        Ok(dinput)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.set(&[i, i], 1.0f64);
        }
        let mut lin = Linear::from_parts(w, Tensor::zeros(&[3]));
        let x = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(lin.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic_case() {
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let mut lin = Linear::from_parts(w, Tensor::zeros(&[1]));
        let x = Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn zero_weight_outputs_bias() {
        let w = Tensor::zeros(&[2, 4]);
        let b = Tensor::from_vec(&[2], vec![0.7, -0.3]).unwrap();
        let mut lin = Linear::from_parts(w, b.clone());
        let x = Tensor::from_vec(&[4], vec![9.0, 8.0, 7.0, 6.0]).unwrap();
        assert_eq!(lin.forward(&x).unwrap(), b);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut lin = Linear::from_parts(Tensor::<f32>::zeros(&[2, 3]), Tensor::zeros(&[2]));
        assert!(lin.forward(&Tensor::zeros(&[4])).is_err());
    }
}
