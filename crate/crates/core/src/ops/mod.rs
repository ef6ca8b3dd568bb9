//! Differentiable operations.
//!
//! Every op is a stateful [`Layer`]: `forward` caches what the backward
//! pass needs, `backward` consumes the upstream gradient, accumulates into
//! parameter gradients and returns the input gradient. Ops own their
//! parameters as [`Param`]s (value plus matching gradient accumulator).

mod conv;
mod linear;
mod pool;

pub mod activations;

pub use activations::{softmax_axis, Relu, Sigmoid, Softmax};
pub use conv::Conv2d;
pub use linear::Linear;
pub use pool::MaxPool2;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor with its gradient accumulator. The name is the
/// checkpoint key, e.g. `stage3.conv1.weight`.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// The differentiable-operation contract.
///
/// `backward` must be called after `forward` on the same input; gradients
/// returned match central finite differences within 1e-4 relative error at
/// check-grade (f64) precision, which `gradcheck` enforces.
pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>>;

    /// Returns the input gradient and accumulates parameter gradients.
    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// `c += a @ b` for row-major slices, `a` is m×k, `b` is k×n, `c` is m×n.
/// ikj loop order keeps the inner loop contiguous so it vectorizes.
pub(crate) fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a @ bᵀ`, `a` is m×k, `b` is n×k, `c` is m×n. Row-by-row dot products.
pub(crate) fn gemm_abt_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c += aᵀ @ b`, `a` is k×m, `b` is k×n, `c` is m×n.
pub(crate) fn gemm_atb_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 - 0.7).collect();

        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    want[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }

        let mut c = vec![0.0; m * n];
        gemm_acc(m, k, n, &a, &b, &mut c);
        assert_eq!(c, want);

        // a @ bᵀ with b stored transposed (n×k)
        let mut bt = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_abt_acc(m, k, n, &a, &bt, &mut c2);
        assert_eq!(c2, want);

        // aᵀ @ b with a stored transposed (k×m)
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c3 = vec![0.0; m * n];
        gemm_atb_acc(m, k, n, &at, &b, &mut c3);
        assert_eq!(c3, want);
    }
}
