use serde::{Deserialize, Serialize};

use super::tensor::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// One bias-corrected Adam update over every trainable parameter, followed by
/// zeroing the gradients. The L2 penalty enters as `weight_decay * value`
/// added to the gradient of decay-enabled parameters.
pub fn adam_step(params: &mut [Param], config: &OptimConfig) {
    for p in params.iter_mut().filter(|p| p.trainable) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        let decay = if p.decay_enabled { config.weight_decay } else { 0.0 };
        let Param {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = p;
        for (((x, g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.iter_mut())
            .zip(adam_m.iter_mut())
            .zip(adam_v.iter_mut())
        {
            let g_eff = *g + decay * *x;
            *m = config.beta1 * *m + (1.0 - config.beta1) * g_eff;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g_eff * g_eff;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn param(values: Vec<f64>, decay: bool) -> Param {
        let n = values.len();
        Param::new("p", Tensor::new(vec![n], values).unwrap(), decay)
    }

    #[test]
    fn defaults() {
        let c = OptimConfig::default();
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(c.weight_decay, 1e-3);
        assert_eq!((c.beta1, c.beta2, c.epsilon), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut ps = vec![param(vec![0.3, -1.2, 4.0], false)];
        let before = ps[0].value.clone();
        for _ in 0..5 {
            adam_step(&mut ps, &OptimConfig::default());
        }
        assert_eq!(ps[0].value, before);
        assert_eq!(ps[0].step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = OptimConfig::default();
        let mut ps = vec![param(vec![1.0, -2.0, 0.5], false)];
        ps[0].grad = vec![0.5, -3.0, 0.02];
        adam_step(&mut ps, &cfg);
        for (after, (before, g)) in ps[0].data().iter().zip([(1.0, 0.5), (-2.0, -3.0), (0.5f64, 0.02f64)]) {
            let delta = before - after;
            assert!((delta.abs() - cfg.learning_rate).abs() / cfg.learning_rate < 1e-6);
            assert_eq!(delta.signum(), g.signum());
        }
        assert!(ps[0].grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn decay_enters_as_gradient_term() {
        let cfg = OptimConfig::default();
        let mut ps = vec![param(vec![2.0], true)];
        adam_step(&mut ps, &cfg);
        // first moment after one step holds (1 - beta1) * effective gradient
        let g_eff = ps[0].adam_m[0] / (1.0 - cfg.beta1);
        assert!((g_eff - 1e-3 * 2.0).abs() < 1e-15);
        assert!(ps[0].data()[0] < 2.0);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut ps = vec![param(vec![1.0], true)];
        ps[0].trainable = false;
        ps[0].grad = vec![1.0];
        adam_step(&mut ps, &OptimConfig::default());
        assert_eq!(ps[0].data(), &[1.0]);
        assert_eq!(ps[0].step_count, 0);
    }
}
