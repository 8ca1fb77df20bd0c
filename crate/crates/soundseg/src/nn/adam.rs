//! Adam optimizer with bias correction.

use super::{ModelParams, Scalar, UNetConfig};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    m: ModelParams<F>,
    v: ModelParams<F>,
    step: u64,
    pub learning_rate: f64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: &UNetConfig, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate {learning_rate} must be positive"
            )));
        }
        Ok(AdamState {
            m: ModelParams::zeros(config)?,
            v: ModelParams::zeros(config)?,
            step: 0,
            learning_rate,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update, elementwise over every parameter tensor:
/// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`,
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments.
pub fn adam_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamState<F>,
) -> Result<()> {
    let g_tensors = grads.tensors();
    let p_tensors_len: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if g_tensors.len() != p_tensors_len.len()
        || g_tensors
            .iter()
            .zip(p_tensors_len.iter())
            .any(|(g, &pl)| g.len() != pl)
    {
        return Err(Error::invalid(
            "gradient tensors do not mirror parameter shapes",
        ));
    }

    state.step += 1;
    let t = state.step;
    let b1 = F::from_f64(ADAM_BETA1);
    let b2 = F::from_f64(ADAM_BETA2);
    let one = F::one();
    let eps = F::from_f64(ADAM_EPSILON);
    let lr = F::from_f64(state.learning_rate);
    let bc1 = F::from_f64(1.0 - ADAM_BETA1.powi(t as i32));
    let bc2 = F::from_f64(1.0 - ADAM_BETA2.powi(t as i32));

    let m_tensors = state.m.tensors_mut();
    let v_tensors = state.v.tensors_mut();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g_tensors)
        .zip(m_tensors)
        .zip(v_tensors)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> UNetConfig {
        UNetConfig {
            depth: 1,
            base_filters: 2,
            kernel_size: 3,
            input_height: 4,
            input_width: 4,
            input_channels: 1,
        }
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let cfg = tiny_config();
        let mut params = ModelParams::<f64>::init(&cfg, 9).unwrap();
        let before = params.clone();
        let grads = ModelParams::<f64>::zeros(&cfg).unwrap();
        let mut state = AdamState::new(&cfg, 0.001).unwrap();
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // For |g| >> eps the bias-corrected first step is -lr * sign(g).
        let cfg = tiny_config();
        let mut params = ModelParams::<f64>::zeros(&cfg).unwrap();
        let mut grads = ModelParams::<f64>::zeros(&cfg).unwrap();
        for t in grads.tensors_mut() {
            for v in t {
                *v = 0.5;
            }
        }
        let mut state = AdamState::new(&cfg, 0.001).unwrap();
        adam_step(&mut params, &grads, &mut state).unwrap();
        for t in params.tensors() {
            for &v in t {
                assert!((v + 0.001).abs() < 1e-6, "step {v}, expected ~ -0.001");
            }
        }
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        let cfg = tiny_config();
        assert!(AdamState::<f64>::new(&cfg, 0.0).is_err());
        assert!(AdamState::<f64>::new(&cfg, -1.0).is_err());
    }
}
