use super::config::TrainingConfig;
use super::NnError;

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    t: u64,
    cfg: &TrainingConfig,
) -> Result<(), NnError> {
    let n = params.len();
    for got in [grads.len(), state.m.len(), state.v.len()] {
        if got != n {
            return Err(NnError::LengthMismatch { expected: n, got });
        }
    }
    assert!(t >= 1, "Adam step index starts at 1");
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let cfg = TrainingConfig::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainingConfig::default();
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1, &cfg).unwrap();
        // m̂ = 1, v̂ = 1 ⇒ Δ = lr / (1 + eps)
        let expected = -1e-5 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-20, "{}", p[0]);
    }

    /// Scalar re-derivation of the Adam recurrences, independent of `adam_step`.
    fn scalar_adam_updates(g: f64, steps: usize, lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        (1..=steps)
            .map(|t| {
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mh = m / (1.0 - b1.powi(t as i32));
                let vh = v / (1.0 - b2.powi(t as i32));
                lr * mh / (vh.sqrt() + eps)
            })
            .collect()
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            ..TrainingConfig::default()
        };
        let g = 0.37;
        let oracle = scalar_adam_updates(g, 1000, cfg.learning_rate);
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let mut prev = 0.0;
        for t in 1..=1000u64 {
            adam_step(&mut p, &[g], &mut s, t, &cfg).unwrap();
            let step = prev - p[0];
            prev = p[0];
            assert!((step - oracle[t as usize - 1]).abs() < 1e-15);
        }
        let last = oracle[999];
        assert!((last - cfg.learning_rate).abs() / cfg.learning_rate < 0.01);
    }

    #[test]
    fn length_mismatch() {
        let cfg = TrainingConfig::default();
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        assert!(matches!(
            adam_step(&mut p, &[1.0], &mut s, 1, &cfg),
            Err(NnError::LengthMismatch { .. })
        ));
    }
}
