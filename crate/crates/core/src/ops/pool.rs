//! 2×2 max pooling with stride 2.

use crate::error::{Error, Result};
use crate::ops::Layer;
use crate::tensor::{Scalar, Tensor};

/// Halves both spatial dimensions; backward routes each gradient to the
/// first (row-major) maximal element of its window.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2<T: Scalar> {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool2<T> {
    pub fn new() -> Self {
        MaxPool2 {
            argmax: Vec::new(),
            input_shape: Vec::new(),
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.rank() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2 expects C×H×W input, got rank {}",
                input.rank()
            )));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2 requires even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        self.argmax.clear();
        self.argmax.reserve(c * oh * ow);
        let data = input.data();
        let odata = out.data_mut();
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = (ci * h + 2 * oy) * w + 2 * ox;
                    let mut best = data[best_idx];
                    // row-major scan; strict > keeps the first max on ties
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (ci * h + 2 * oy + dy) * w + 2 * ox + dx;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    odata[(ci * oh + oy) * ow + ox] = best;
                    self.argmax.push(best_idx);
                }
            }
        }
        self.input_shape = input.shape().to_vec();
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        if self.input_shape.is_empty() {
            return Err(Error::InvalidInput("maxpool2 backward before forward".into()));
        }
        if upstream.len() != self.argmax.len() {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2 upstream has {} elements, expected {}",
                upstream.len(),
                self.argmax.len()
            )));
        }
        let mut dinput = Tensor::zeros(&self.input_shape);
        let din = dinput.data_mut();
        for (&src, &g) in self.argmax.iter().zip(upstream.data()) {
            din[src] += g;
        }
        Ok(dinput)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_stays_constant() {
        let mut pool = MaxPool2::new();
        let input = Tensor::filled(&[2, 4, 4], 3.5f64);
        let out = pool.forward(&input).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn direct_max_of_window() {
        let mut pool = MaxPool2::new();
        let input = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = pool.forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn five_pools_take_224_to_7() {
        let mut size = 224usize;
        for _ in 0..5 {
            let mut pool = MaxPool2::new();
            let out = pool.forward(&Tensor::<f32>::zeros(&[1, size, size])).unwrap();
            size = out.shape()[1];
        }
        assert_eq!(size, 7);
    }

    #[test]
    fn odd_dims_rejected() {
        let mut pool = MaxPool2::new();
        assert!(pool.forward(&Tensor::<f32>::zeros(&[1, 3, 4])).is_err());
        assert!(pool.forward(&Tensor::<f32>::zeros(&[1, 4, 5])).is_err());
    }

    #[test]
    fn backward_routes_to_first_max_on_ties() {
        let mut pool = MaxPool2::new();
        let input = Tensor::from_vec(&[1, 2, 2], vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        pool.forward(&input).unwrap();
        let up = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let din = pool.backward(&up).unwrap();
        assert_eq!(din.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let mut pool = MaxPool2::new();
        let input = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 9.0, 4.0]).unwrap();
        pool.forward(&input).unwrap();
        let up = Tensor::from_vec(&[1, 1, 1], vec![0.5]).unwrap();
        let din = pool.backward(&up).unwrap();
        assert_eq!(din.data(), &[0.0, 0.0, 0.5, 0.0]);
    }
}
