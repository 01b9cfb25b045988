//! AdamW with decoupled weight decay, operating on flat coordinate vectors.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdamW {
    /// lr = 0 is allowed and makes the step a no-op.
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        if lr < 0.0 || !lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate must be nonnegative, got {lr}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(AdamW {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
        })
    }

    /// One optimizer step. Decoupled decay shrinks the parameters before the
    /// bias-corrected adaptive update. A non-finite gradient aborts the step.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape("adamw_step", &[self.m.len()], &[grad.len()]));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { context: "adamw gradient".into() });
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            if self.weight_decay != 0.0 {
                params[i] -= self.lr * self.weight_decay * params[i];
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_unit_ratio() {
        // m_hat = v_hat = 1 on the first step, so |dx| = lr / (1 + eps).
        let mut opt = AdamW::new(1, 0.1, 0.9, 0.999, 1e-8, 0.0).unwrap();
        let mut x = vec![0.0];
        opt.step(&mut x, &[1.0]).unwrap();
        assert!((x[0] + 0.1).abs() < 1e-8, "x = {}", x[0]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut opt = AdamW::new(3, 0.1, 0.9, 0.999, 1e-8, 0.0).unwrap();
        let mut x = vec![0.4, -0.2, 1.0];
        let before = x.clone();
        opt.step(&mut x, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(x, before);
    }

    #[test]
    fn decoupled_decay_shrinks_toward_zero() {
        let mut opt = AdamW::new(1, 0.1, 0.9, 0.999, 1e-8, 0.5).unwrap();
        let mut x = vec![2.0];
        opt.step(&mut x, &[0.0]).unwrap();
        assert!((x[0] - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = AdamW::new(1, 0.1, 0.9, 0.999, 1e-8, 0.0).unwrap();
        let mut x = vec![0.0];
        assert!(matches!(
            opt.step(&mut x, &[f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(x, vec![0.0]);
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(AdamW::new(1, -0.1, 0.9, 0.999, 1e-8, 0.0).is_err());
        assert!(AdamW::new(1, 0.1, 1.0, 0.999, 1e-8, 0.0).is_err());
    }
}
