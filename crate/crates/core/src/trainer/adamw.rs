//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl OptState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One AdamW update. `names` label parameters in errors. Nothing is
/// modified when any gradient is non-finite.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut OptState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim("adamw_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::dim("adamw_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(Error::NonFiniteGradient(name));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            *theta -= cfg.lr * cfg.weight_decay * *theta;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: f64, g: f64, cfg: &AdamConfig) -> f64 {
        let mut p = Tensor::scalar(theta);
        let mut state = OptState::new([&p]);
        adamw_step(&mut [&mut p], &[Tensor::scalar(g)], &["p".into()], &mut state, cfg).unwrap();
        assert_eq!(state.t, 1);
        p.item()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let cfg = AdamConfig::default();
        assert_eq!(step(0.37, 0.0, &cfg), 0.37);
    }

    #[test]
    fn pure_decay() {
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        assert!((step(1.0, 0.0, &cfg) - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_bias_corrected() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((step(0.0, 1.0, &cfg) - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = Tensor::scalar(1.0);
        let mut state = OptState::new([&p]);
        let err = adamw_step(
            &mut [&mut p],
            &[Tensor::scalar(f64::NAN)],
            &["music.pool.w".into()],
            &mut state,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "music.pool.w"));
        assert_eq!((p.item(), state.t), (1.0, 0));
    }
}
