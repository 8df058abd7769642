use serde::{Deserialize, Serialize};

use crate::arch::{Gradients, NetworkParams};
use crate::error::NetError;
use crate::scalar::NetScalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NetError::Hyperparameter(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NetError::Hyperparameter("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(NetError::Hyperparameter("eps must be positive".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite.
pub fn adam_step<T: NetScalar>(
    params: &mut NetworkParams<T>,
    grads: &Gradients<T>,
    cfg: &AdamConfig,
) -> Result<(), NetError> {
    if grads.tensors.len() != params.tensors.len() {
        return Err(NetError::Shape(format!(
            "{} gradient tensors for {} parameters",
            grads.tensors.len(),
            params.tensors.len()
        )));
    }
    for (i, (g, p)) in grads.tensors.iter().zip(&params.tensors).enumerate() {
        if g.shape() != p.shape() {
            return Err(NetError::Shape(format!(
                "gradient {i} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(NetError::Diverged(i));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let corr1 = T::lit(1.0 - cfg.beta1.powi(t));
    let corr2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    for ((p, g), (m, v)) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(params.m.iter_mut().zip(params.v.iter_mut()))
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_params(x: f64) -> NetworkParams<f64> {
        let t = Tensor::from_vec(&[1], vec![x]).unwrap();
        NetworkParams {
            tensors: vec![t.clone()],
            m: vec![Tensor::zeros(&[1])],
            v: vec![Tensor::zeros(&[1])],
            step: 0,
        }
    }

    fn grad(g: f64) -> Gradients<f64> {
        Gradients {
            tensors: vec![Tensor::from_vec(&[1], vec![g]).unwrap()],
        }
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        let mut p = scalar_params(0.0);
        adam_step(&mut p, &grad(1.0), &cfg).unwrap();
        let expected = -cfg.lr * 1.0 / (1.0 + cfg.eps);
        assert!((p.tensors[0].data()[0] - expected).abs() < 1e-12);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = scalar_params(0.0);
        adam_step(&mut p, &grad(1.0), &cfg).unwrap();
        let before = p.tensors[0].data()[0];
        let (m0, v0) = (p.m[0].data()[0], p.v[0].data()[0]);
        let mut q = scalar_params(0.25);
        adam_step(&mut q, &grad(0.0), &cfg).unwrap();
        assert_eq!(q.tensors[0].data()[0], 0.25);
        adam_step(&mut p, &grad(0.0), &cfg).unwrap();
        assert_eq!(p.m[0].data()[0], 0.9 * m0);
        assert_eq!(p.v[0].data()[0], 0.999 * v0);
        // momentum still moves the parameter
        assert!(p.tensors[0].data()[0] < before);
    }

    #[test]
    fn nan_gradient_diverges_without_mutation() {
        let mut p = scalar_params(1.0);
        let err = adam_step(&mut p, &grad(f64::NAN), &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, NetError::Diverged(0)));
        assert!(err.to_string().contains("diverged"));
        assert_eq!(p, scalar_params(1.0));
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
