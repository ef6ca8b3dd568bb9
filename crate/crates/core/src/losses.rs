//! Margin loss on capsule norms, reconstruction loss, and their weighted
//! total.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Margin boundaries and weights. `m_plus`/`m_minus` follow the training
/// protocol; `lambda` down-weights absent classes; `recon_weight` scales
/// the reconstruction term so it does not dominate the margin term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
    pub recon_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
            recon_weight: 0.0005,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.m_minus && self.m_minus < self.m_plus && self.m_plus <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= m_minus < m_plus <= 1, got m_minus={}, m_plus={}",
                self.m_minus, self.m_plus
            )));
        }
        if self.lambda < 0.0 || self.recon_weight < 0.0 {
            return Err(Error::InvalidConfig(
                "lambda and recon_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Σ_c [ T_c·max(0, m⁺−‖v_c‖)² + λ(1−T_c)·max(0, ‖v_c‖−m⁻)² ]
pub fn margin_loss<T: Scalar>(norms: &[T], label: usize, cfg: &LossConfig) -> T {
    debug_assert!(label < norms.len());
    let m_plus = T::of(cfg.m_plus);
    let m_minus = T::of(cfg.m_minus);
    let lambda = T::of(cfg.lambda);
    let mut loss = T::zero();
    for (c, &n) in norms.iter().enumerate() {
        if c == label {
            let miss = (m_plus - n).max(T::zero());
            loss += miss * miss;
        } else {
            let over = (n - m_minus).max(T::zero());
            loss += lambda * over * over;
        }
    }
    loss
}

/// d(margin)/d(norm) per class, for the backward pass through capsule norms.
pub fn margin_loss_grad<T: Scalar>(norms: &[T], label: usize, cfg: &LossConfig) -> Vec<T> {
    let m_plus = T::of(cfg.m_plus);
    let m_minus = T::of(cfg.m_minus);
    let lambda = T::of(cfg.lambda);
    let two = T::of(2.0);
    norms
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if c == label {
                let miss = (m_plus - n).max(T::zero());
                -two * miss
            } else {
                let over = (n - m_minus).max(T::zero());
                two * lambda * over
            }
        })
        .collect()
}

/// Sum of squared pixel differences.
pub fn reconstruction_loss<T: Scalar>(reconstruction: &[T], target: &[T]) -> Result<T> {
    if reconstruction.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction has {} values, target {}",
            reconstruction.len(),
            target.len()
        )));
    }
    let mut acc = T::zero();
    for (&r, &x) in reconstruction.iter().zip(target) {
        let d = r - x;
        acc += d * d;
    }
    Ok(acc)
}

/// `L = L_c + w·L_r` with the configured reconstruction weight.
pub fn total_loss<T: Scalar>(margin: T, reconstruction: T, cfg: &LossConfig) -> T {
    margin + T::of(cfg.recon_weight) * reconstruction
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_give_zero_loss() {
        let cfg = LossConfig::default();
        let norms = vec![0.1f64, 0.9, 0.1, 0.1];
        assert_eq!(margin_loss(&norms, 1, &cfg), 0.0);
    }

    #[test]
    fn all_zero_norms_cost_m_plus_squared() {
        let cfg = LossConfig::default();
        let norms = vec![0.0f64, 0.0, 0.0];
        let loss = margin_loss(&norms, 0, &cfg);
        assert!((loss - 0.81).abs() < 1e-12);
    }

    #[test]
    fn single_wrong_class_over_margin() {
        let cfg = LossConfig::default();
        let norms = vec![0.9f64, 0.6, 0.1];
        let loss = margin_loss(&norms, 0, &cfg);
        assert!((loss - 0.125).abs() < 1e-12);
    }

    #[test]
    fn margin_loss_nonnegative_and_zero_iff_separated() {
        let cfg = LossConfig::default();
        let mut rng = crate::rng::seeded(5);
        use rand::Rng;
        for _ in 0..500 {
            let c = rng.gen_range(1..6);
            let label = rng.gen_range(0..c);
            let norms: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let loss = margin_loss(&norms, label, &cfg);
            assert!(loss >= 0.0);
            let separated = norms[label] >= cfg.m_plus
                && norms
                    .iter()
                    .enumerate()
                    .all(|(i, &n)| i == label || n <= cfg.m_minus);
            assert_eq!(loss == 0.0, separated, "norms {norms:?} label {label}");
        }
    }

    #[test]
    fn margin_grad_matches_finite_differences_away_from_hinges() {
        let cfg = LossConfig::default();
        let norms = vec![0.5f64, 0.3, 0.85, 0.02];
        let label = 0;
        let grad = margin_loss_grad(&norms, label, &cfg);
        let eps = 1e-6;
        for i in 0..norms.len() {
            // skip coordinates within 1e-3 of a hinge
            let at_hinge = (norms[i] - cfg.m_plus).abs() < 1e-3
                || (norms[i] - cfg.m_minus).abs() < 1e-3;
            assert!(!at_hinge);
            let mut plus = norms.clone();
            plus[i] += eps;
            let mut minus = norms.clone();
            minus[i] -= eps;
            let numeric =
                (margin_loss(&plus, label, &cfg) - margin_loss(&minus, label, &cfg)) / (2.0 * eps);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-12);
            assert!(rel < 1e-6, "coord {i}: {} vs {numeric}", grad[i]);
        }
    }

    #[test]
    fn reconstruction_loss_cases() {
        let x = vec![0.2f64, 0.4, 0.6];
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        let r = vec![1.2f64, 0.4, 0.6];
        assert!((reconstruction_loss(&r, &x).unwrap() - 1.0).abs() < 1e-12);
        // quadratic homogeneity: doubling the residual quadruples the loss
        let r2 = vec![2.2f64, 0.4, 0.6];
        let l1 = reconstruction_loss(&r, &x).unwrap();
        let l2 = reconstruction_loss(&r2, &x).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
        assert!(reconstruction_loss(&x[..2], &x).is_err());
    }

    #[test]
    fn total_loss_weights_reconstruction() {
        let cfg = LossConfig::default();
        assert!((total_loss(1.0f64, 2.0, &cfg) - 1.001).abs() < 1e-12);
        assert_eq!(total_loss(3.0f64, 0.0, &cfg), 3.0);
        let zero_w = LossConfig {
            recon_weight: 0.0,
            ..cfg
        };
        assert_eq!(total_loss(3.0f64, 1e9, &zero_w), 3.0);
    }

    #[test]
    fn total_loss_slope_is_exactly_the_weight() {
        let cfg = LossConfig::default();
        // with zero margin the slope is free of cancellation: w·r / r = w
        for r in [1.0f64, 2.0, 4.0, 1024.0] {
            assert_eq!(total_loss(0.0f64, r, &cfg), 0.0005 * r);
        }
        // definitional identity at arbitrary margins
        for (m, r) in [(1.0f64, 2.0f64), (0.3, 7.5), (12.0, 0.25)] {
            assert_eq!(total_loss(m, r, &cfg), m + 0.0005 * r);
        }
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            m_plus: 0.1,
            m_minus: 0.9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
