//! Adam with bias correction and coupled (L2-in-gradient) weight decay.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Optimizer moments for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    /// Moments initialized to zero, one pair per parameter shape.
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            step: 0,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.epsilon = epsilon;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over named parameters, in place.
///
/// Weight decay enters as an L2 gradient term (`grad + wd * param`) before
/// the moment update. A non-finite gradient aborts with the parameter name.
pub fn adam_step(
    params: &mut [(&str, &mut Tensor)],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(CoreError::Shape(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(CoreError::Shape(format!(
                "adam_step: parameter {name} is {:?} but gradient is {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(CoreError::NonFiniteGradient {
                param: name.to_string(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (((_, p), g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((pv, gv), mv), vv) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.values_mut())
            .zip(v.values_mut())
        {
            let grad = gv + weight_decay * *pv;
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * grad;
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * grad * grad;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_and_zero_decay_leave_params_unchanged() {
        let mut p = t(&[1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut state = AdamState::new(&[p.shape()]);
        adam_step(&mut [("p", &mut p)], &[t(&[0.0, 0.0, 0.0])], &mut state, 0.1, 0.0).unwrap();
        assert!(p.bitwise_eq(&before));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With bias correction, m_hat = g and v_hat = g^2 on step one, so
        // the update is -lr * g / (|g| + eps) which is about -lr * sign(g).
        let lr = 0.05;
        let mut p = t(&[1.0, 1.0]);
        let mut state = AdamState::new(&[p.shape()]);
        adam_step(&mut [("p", &mut p)], &[t(&[0.3, -2.0])], &mut state, lr, 0.0).unwrap();
        assert!((p.values()[0] - (1.0 - lr)).abs() < 1e-6);
        assert!((p.values()[1] - (1.0 + lr)).abs() < 1e-6);
    }

    #[test]
    fn identical_steps_are_deterministic() {
        let run = || {
            let mut p = t(&[0.4, -0.9]);
            let mut state = AdamState::new(&[p.shape()]);
            for _ in 0..5 {
                adam_step(
                    &mut [("p", &mut p)],
                    &[t(&[0.12, -0.7])],
                    &mut state,
                    0.01,
                    0.001,
                )
                .unwrap();
            }
            p
        };
        assert!(run().bitwise_eq(&run()));
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = t(&[1.0]);
        let mut state = AdamState::new(&[p.shape()]);
        let err = adam_step(
            &mut [("encoder.w1", &mut p)],
            &[t(&[f64::NAN])],
            &mut state,
            0.1,
            0.0,
        )
        .unwrap_err();
        match err {
            CoreError::NonFiniteGradient { param } => assert_eq!(param, "encoder.w1"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn weight_decay_pulls_toward_zero_even_with_zero_gradient() {
        let mut p = t(&[2.0]);
        let mut state = AdamState::new(&[p.shape()]);
        adam_step(&mut [("p", &mut p)], &[t(&[0.0])], &mut state, 0.1, 0.01).unwrap();
        assert!(p.values()[0] < 2.0);
    }
}
