use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::{mlp_backward, mlp_forward, MlpSpec, MlpTape};
use super::{Activation, Init, NetworkError, ParamVector};
use crate::dynamics::State;

/// Unconstrained force network `(q, q̇[, t]) → fₙ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UanModel {
    pub spec: MlpSpec,
    /// Whether time is appended to the input.
    pub use_time: bool,
    /// Factor applied to `t` before it enters the network.
    #[serde(default = "unit")]
    pub time_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl UanModel {
    /// Leaky-relu network over `n` degrees of freedom.
    pub fn new(n: usize, hidden: Vec<usize>, use_time: bool, init: Init) -> Self {
        UanModel {
            spec: MlpSpec {
                input_dim: 2 * n + usize::from(use_time),
                hidden,
                activation: Activation::LeakyRelu,
                quadratic_fraction: None,
                output_dim: n,
                init,
            },
            use_time,
            time_scale: 1.0,
        }
    }

    pub fn with_time_scale(self, time_scale: f64) -> Self {
        UanModel { time_scale, ..self }
    }

    pub fn n(&self) -> usize {
        self.spec.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        self.spec.validate()?;
        if self.spec.input_dim != 2 * self.n() + usize::from(self.use_time) {
            return Err(NetworkError::InvalidSpec(
                "force network input must be (q, q̇[, t])".into(),
            ));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(NetworkError::InvalidSpec(format!(
                "time scale must be positive, got {}",
                self.time_scale
            )));
        }
        Ok(())
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        self.spec.init_params(seed)
    }

    fn inputs(&self, states: &[&State]) -> Result<Array2<f64>, NetworkError> {
        let n = self.n();
        let mut x = Array2::zeros((self.spec.input_dim, states.len()));
        for (b, s) in states.iter().enumerate() {
            super::mlp::check_len("state", n, s.q.len())?;
            super::mlp::check_len("state", n, s.qdot.len())?;
            for i in 0..n {
                x[[i, b]] = s.q[i];
                x[[n + i, b]] = s.qdot[i];
            }
            if self.use_time {
                x[[2 * n, b]] = self.time_scale * s.t;
            }
        }
        Ok(x)
    }

    /// Batched forward pass, output `n × batch`.
    pub fn forward(&self, params: &[f64], states: &[&State]) -> Result<(Array2<f64>, MlpTape), NetworkError> {
        let x = self.inputs(states)?;
        mlp_forward(&self.spec, params, x.view())
    }

    pub fn backward(&self, params: &[f64], tape: &MlpTape, out_bar: ArrayView2<f64>) -> Vec<f64> {
        mlp_backward(&self.spec, params, tape, out_bar)
    }

    /// Force at a single state.
    pub fn force(&self, params: &[f64], state: &State) -> Result<Vec<f64>, NetworkError> {
        Ok(self.forward(params, &[state])?.0.column(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_last_layer_gives_zero_force() {
        let m = UanModel::new(2, vec![10, 10], true, Init::ZeroLastLayer);
        let p = m.init_params(1);
        let s = State::new(vec![1.0, 2.0], vec![-1.0, 0.5], 3.0);
        assert_eq!(m.force(p.values(), &s).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.spec.input_dim, 5);
    }

    #[test]
    fn time_input_matters_only_when_enabled() {
        let with_t = UanModel::new(1, vec![6], true, Init::UniformFanIn);
        let p = with_t.init_params(2);
        let a = with_t
            .force(p.values(), &State::new(vec![0.3], vec![0.1], 0.0))
            .unwrap();
        let b = with_t
            .force(p.values(), &State::new(vec![0.3], vec![0.1], 2.0))
            .unwrap();
        assert_ne!(a, b);
        let no_t = UanModel::new(1, vec![6], false, Init::UniformFanIn);
        let p = no_t.init_params(2);
        let a = no_t.force(p.values(), &State::new(vec![0.3], vec![0.1], 0.0)).unwrap();
        let b = no_t.force(p.values(), &State::new(vec![0.3], vec![0.1], 2.0)).unwrap();
        assert_eq!(a, b);
    }
}
