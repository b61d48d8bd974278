use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `lr · (1 - step / total)` with 1-based steps, so the final step uses 0.
    LinearDecay,
}

impl Schedule {
    pub fn rate(self, base: f64, step: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::LinearDecay if total == 0 => base,
            Schedule::LinearDecay => base * (1.0 - step.min(total) as f64 / total as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter tensor plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
///
/// `step` is only used to label a non-finite gradient error; nothing is
/// modified in that case.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
    step: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(dim_err(
            "adamw",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(dim_err("adamw", format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { step });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data = p.data_mut();
        for j in 0..data.len() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * data[j]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(x: f64, g: f64, cfg: &AdamConfig, lr: f64) -> f64 {
        let mut p = Tensor::vector(vec![x]);
        let g = Tensor::vector(vec![g]);
        let mut st = AdamState::new(&[&p]);
        adamw_step(&mut [&mut p], &[&g], &mut st, cfg, lr, 1).unwrap();
        p.data()[0]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = AdamConfig::default();
        assert_eq!(step_scalar(0.37, 0.0, &cfg, 0.1), 0.37);
    }

    #[test]
    fn first_step_on_square_matches_reference() {
        // f(x) = x², x = 1, g = 2. Reference written out term by term.
        let (b1, b2, eps, wd, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.01f64, 1e-3f64);
        let g = 2.0f64;
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let expected = 1.0 - lr * (m_hat / (v_hat.sqrt() + eps) + wd * 1.0);
        let cfg = AdamConfig { beta1: b1, beta2: b2, eps, weight_decay: wd };
        assert!((step_scalar(1.0, g, &cfg, lr) - expected).abs() < 1e-12);
    }

    #[test]
    fn linear_decay_reaches_zero_on_the_last_step() {
        assert_eq!(Schedule::LinearDecay.rate(0.1, 10, 10), 0.0);
        assert!((Schedule::LinearDecay.rate(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert_eq!(Schedule::Constant.rate(0.1, 10, 10), 0.1);
        let cfg = AdamConfig::default();
        assert_eq!(step_scalar(0.5, 3.0, &cfg, Schedule::LinearDecay.rate(0.1, 4, 4)), 0.5);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![0.5, f64::NAN]);
        let mut st = AdamState::new(&[&p]);
        let err = adamw_step(&mut [&mut p], &[&g], &mut st, &AdamConfig::default(), 0.1, 42);
        assert!(matches!(err, Err(Error::NonFiniteGradient { step: 42 })));
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(st.t, 0);
    }
}
