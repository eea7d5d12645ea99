use super::{ModelConfig, ModelParams, Scalar};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: ModelParams<T>,
    pub second_moment: ModelParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            first_moment: ModelParams::zeros(config),
            second_moment: ModelParams::zeros(config),
        }
    }
}

/// One bias-corrected Adam update. `step` counts from 1.
///
/// Gradients are checked before anything is touched, so a non-finite
/// gradient leaves both `params` and `state` unchanged.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
    step: u64,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::GradientOverflow(step));
    }
    let step = step.max(1) as i32;
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let correction1 = T::one() - b1.powi(step);
    let correction2 = T::one() - b2.powi(step);
    let lr = T::of(lr);
    let eps = T::of(ADAM_EPSILON);

    let grads = grads.tensors();
    let mut m = state.first_moment.tensors_mut();
    let mut v = state.second_moment.tensors_mut();
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        debug_assert_eq!(p.shape, g.shape);
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
            v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
            let m_hat = m.data[i] / correction1;
            let v_hat = v.data[i] / correction2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if !params.all_finite() {
        return Err(Error::GradientOverflow(step as u64));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 1,
            hidden: 4,
            heads: 2,
            max_seq_len: 4,
            vocab_size: 6,
            ffn_multiplier: 2,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let cfg = tiny();
        let mut p = init_params::<f64>(&cfg, 1).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&cfg);
        adam_step(&mut p, &ModelParams::zeros(&cfg), &mut state, 0.1, 1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε).
        let cfg = tiny();
        let mut p = ModelParams::<f64>::zeros(&cfg);
        let mut g = ModelParams::<f64>::zeros(&cfg);
        g.nsp_bias[0] = 1.0;
        let mut state = AdamState::new(&cfg);
        adam_step(&mut p, &g, &mut state, 0.1, 1).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.nsp_bias[0] - expected).abs() < 1e-15);
        assert_eq!(p.nsp_bias[1], 0.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let cfg = tiny();
        let mut p = init_params::<f32>(&cfg, 1).unwrap();
        let before = p.clone();
        let mut g = ModelParams::zeros(&cfg);
        g.mlm_bias[2] = f32::NAN;
        let mut state = AdamState::new(&cfg);
        let err = adam_step(&mut p, &g, &mut state, 0.1, 17).unwrap_err();
        assert_eq!(err.to_string(), "gradient overflow at step 17");
        assert_eq!(p, before);
    }
}
