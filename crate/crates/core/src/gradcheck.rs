//! Central finite-difference verification of analytic gradients.
//!
//! Runs at check-grade (f64) precision only; at f32 the difference quotient
//! is dominated by rounding and the check is meaningless.

use crate::error::{Error, Result};
use crate::ops::{Layer, Param};
use crate::rng::{fill_gaussian, Prng};
use crate::tensor::Tensor;

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn validate_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "grad-check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    Ok(())
}

/// Checks a layer's backward pass against central differences.
///
/// The layer output is reduced to a scalar through a fixed random
/// projection `R`, so the analytic input/parameter gradients are exactly
/// `backward(R)`. Checks every coordinate unless `per_tensor` caps the
/// number of sampled coordinates per tensor. Returns the max relative
/// error over all checked coordinates.
pub fn check_layer<T: Layer<f64>>(
    layer: &mut T,
    input: &Tensor<f64>,
    eps: f64,
    per_tensor: Option<usize>,
    rng: &mut Prng,
) -> Result<f64> {
    validate_eps(eps)?;
    if !input.all_finite() {
        return Err(Error::Numerical("grad-check input not finite".into()));
    }
    let out = layer.forward(input)?;
    if !out.all_finite() {
        return Err(Error::Numerical("grad-check forward produced non-finite".into()));
    }
    let mut projection = Tensor::zeros(out.shape());
    fill_gaussian(&mut projection, 1.0, rng);

    layer.zero_grad();
    let analytic_input = layer.backward(&projection)?;
    let analytic_params: Vec<(String, Tensor<f64>)> = layer
        .params_mut()
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();

    let scalar = |layer: &mut T, x: &Tensor<f64>| -> Result<f64> {
        let out = layer.forward(x)?;
        let mut acc = 0.0;
        for (&o, &r) in out.data().iter().zip(projection.data()) {
            acc += o * r;
        }
        if !acc.is_finite() {
            return Err(Error::Numerical("grad-check objective not finite".into()));
        }
        Ok(acc)
    };

    let mut max_err: f64 = 0.0;

    // input coordinates
    let mut x = input.clone();
    for ci in pick_coords(input.len(), per_tensor, rng) {
        let orig = x.data()[ci];
        x.data_mut()[ci] = orig + eps;
        let lp = scalar(layer, &x)?;
        x.data_mut()[ci] = orig - eps;
        let lm = scalar(layer, &x)?;
        x.data_mut()[ci] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        max_err = max_err.max(relative_error(analytic_input.data()[ci], numeric));
    }

    // parameter coordinates
    for (ti, (_, grads)) in analytic_params.iter().enumerate() {
        for ci in pick_coords(grads.len(), per_tensor, rng) {
            let orig = {
                let mut ps = layer.params_mut();
                let v = ps[ti].value.data()[ci];
                ps[ti].value.data_mut()[ci] = v + eps;
                v
            };
            let lp = scalar(layer, input)?;
            layer.params_mut()[ti].value.data_mut()[ci] = orig - eps;
            let lm = scalar(layer, input)?;
            layer.params_mut()[ti].value.data_mut()[ci] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            max_err = max_err.max(relative_error(grads.data()[ci], numeric));
        }
    }

    // leave the layer caches in a post-forward state on the true input
    layer.forward(input)?;
    Ok(max_err)
}

/// Checks analytic parameter gradients of an arbitrary model against
/// central differences of a scalar loss. `compute_grads` must zero, then
/// fill, every parameter gradient and return the loss; `compute_loss` must
/// evaluate the same loss without touching gradients.
///
/// Returns `(tensor name, max relative error)` per parameter tensor.
pub fn check_params_with_loss<M>(
    model: &mut M,
    compute_grads: &mut dyn FnMut(&mut M) -> Result<f64>,
    compute_loss: &mut dyn FnMut(&mut M) -> Result<f64>,
    params_of: &mut dyn FnMut(&mut M) -> Vec<&mut Param<f64>>,
    eps: f64,
    per_tensor: usize,
    rng: &mut Prng,
) -> Result<Vec<(String, f64)>> {
    validate_eps(eps)?;
    let _ = compute_grads(model)?;
    let snapshot: Vec<(String, Tensor<f64>)> = params_of(model)
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();

    let mut report = Vec::with_capacity(snapshot.len());
    for (ti, (name, grads)) in snapshot.iter().enumerate() {
        let mut max_err: f64 = 0.0;
        for ci in pick_coords(grads.len(), Some(per_tensor), rng) {
            let orig = {
                let mut ps = params_of(model);
                let v = ps[ti].value.data()[ci];
                ps[ti].value.data_mut()[ci] = v + eps;
                v
            };
            let lp = compute_loss(model)?;
            params_of(model)[ti].value.data_mut()[ci] = orig - eps;
            let lm = compute_loss(model)?;
            params_of(model)[ti].value.data_mut()[ci] = orig;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss while checking {name}"
                )));
            }
            let numeric = (lp - lm) / (2.0 * eps);
            max_err = max_err.max(relative_error(grads.data()[ci], numeric));
        }
        report.push((name.clone(), max_err));
    }
    Ok(report)
}

fn pick_coords(len: usize, cap: Option<usize>, rng: &mut Prng) -> Vec<usize> {
    match cap {
        Some(k) if k < len => {
            let mut idx: Vec<usize> = (0..len).collect();
            crate::rng::shuffle(&mut idx, rng);
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}
