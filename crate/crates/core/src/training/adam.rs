use serde::{Deserialize, Serialize};

use super::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates with the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainingError> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(TrainingError::InvalidConfig(format!(
            "optimizer dimension mismatch: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TrainingError::NonFinite {
            step: state.t as usize,
            what: format!("gradient entry {k} is {}", grads[k]),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((w, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::default();
        let mut w = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        s.m = vec![0.5, 0.5];
        s.v = vec![0.25, 0.25];
        adam_step(&mut w, &[0.0, 0.0], &mut s, 0.1, &cfg).unwrap();
        assert_eq!(s.m, vec![0.45, 0.45]);
        assert!(s.v[0] < 0.25);
        // the decayed moment still moves w; with fresh moments nothing moves
        let mut w2 = vec![1.0, -2.0];
        let mut s2 = AdamState::new(2);
        adam_step(&mut w2, &[0.0, 0.0], &mut s2, 0.1, &cfg).unwrap();
        assert_eq!(w2, vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_step_tends_to_learning_rate() {
        let cfg = AdamConfig::default();
        let mut w = vec![0.0];
        let mut s = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = w[0];
            adam_step(&mut w, &[3.7], &mut s, 0.01, &cfg).unwrap();
            last = before - w[0];
        }
        assert!((last - 0.01).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let cfg = AdamConfig::default();
        let mut w = vec![1.0];
        let mut s = AdamState::new(1);
        let mut prev = 1.0f64;
        for step in 0..500 {
            let g = 2.0 * w[0];
            adam_step(&mut w, &[g], &mut s, 0.01, &cfg).unwrap();
            if step >= 10 && w[0].abs() > 0.05 {
                assert!(w[0].abs() < prev, "step {step}");
            }
            prev = w[0].abs();
        }
        assert!(w[0].abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = vec![0.0];
        let mut s = AdamState::new(1);
        let e = adam_step(&mut w, &[f64::NAN], &mut s, 0.1, &AdamConfig::default());
        assert!(matches!(e, Err(TrainingError::NonFinite { .. })));
    }
}
