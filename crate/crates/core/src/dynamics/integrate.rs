use serde::{Deserialize, Serialize};

use super::{true_force, DynamicsError, ForceSample, State, SystemSpec};

/// Fixed-step simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub initial_state: State,
    pub step_size: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.n_steps == 0 {
            return Err(DynamicsError::InvalidConfig("n_steps must be at least 1".into()));
        }
        Ok(())
    }
}

fn shifted(s: &State, h: f64, dq: &[f64], dv: &[f64], dt: f64) -> State {
    State {
        q: s.q.iter().zip(dq).map(|(a, b)| a + h * b).collect(),
        qdot: s.qdot.iter().zip(dv).map(|(a, b)| a + h * b).collect(),
        t: s.t + dt,
    }
}

/// One classic RK4 step of `(q, q̇)' = (q̇, force(q, q̇, t))`; stage times are
/// passed through so time-dependent fields are sampled at `t`, `t + h/2`
/// and `t + h`.
pub fn rk4_step<E, F>(s: &State, h: f64, force: &mut F) -> Result<State, E>
where
    F: FnMut(&State) -> Result<Vec<f64>, E>,
{
    let k1v = force(s)?;
    let k1q = s.qdot.clone();
    let s2 = shifted(s, 0.5 * h, &k1q, &k1v, 0.5 * h);
    let k2v = force(&s2)?;
    let k2q = s2.qdot.clone();
    let s3 = shifted(s, 0.5 * h, &k2q, &k2v, 0.5 * h);
    let k3v = force(&s3)?;
    let k3q = s3.qdot.clone();
    let s4 = shifted(s, h, &k3q, &k3v, h);
    let k4v = force(&s4)?;
    let k4q = s4.qdot;
    let n = s.dim();
    let combine = |a: &[f64], b: &[f64], c: &[f64], d: &[f64], i: usize| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0;
    Ok(State {
        q: (0..n)
            .map(|i| s.q[i] + h * combine(&k1q, &k2q, &k3q, &k4q, i))
            .collect(),
        qdot: (0..n)
            .map(|i| s.qdot[i] + h * combine(&k1v, &k2v, &k3v, &k4v, i))
            .collect(),
        t: s.t + h,
    })
}

fn finite(s: &State) -> bool {
    s.q.iter().chain(&s.qdot).all(|v| v.is_finite()) && s.t.is_finite()
}

/// Trajectory of the true dynamics: `n_steps + 1` samples including the
/// initial state, each carrying the oracle force at the stored state.
pub fn rk4_integrate(spec: &SystemSpec, cfg: &SimConfig) -> Result<Vec<ForceSample>, DynamicsError> {
    cfg.validate()?;
    let n = spec.n();
    if cfg.initial_state.q.len() != n || cfg.initial_state.qdot.len() != n {
        return Err(DynamicsError::Dimension {
            expected: n,
            got: cfg.initial_state.q.len(),
        });
    }
    let mut out = Vec::with_capacity(cfg.n_steps + 1);
    let mut s = cfg.initial_state.clone();
    out.push(ForceSample::observe(spec, s.clone())?);
    let mut force = |x: &State| true_force(spec, x).map(|(f, _, _)| f);
    for step in 1..=cfg.n_steps {
        s = rk4_step(&s, cfg.step_size, &mut force)?;
        if !finite(&s) {
            return Err(DynamicsError::Diverged { step });
        }
        out.push(ForceSample::observe(spec, s.clone())?);
    }
    Ok(out)
}

/// Result of integrating an arbitrary (possibly learned) force field.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<State>,
    /// Step index and reason, when the rollout stopped early.
    pub failure: Option<(usize, String)>,
}

/// Integrates `force` for up to `n_steps`, stopping at the first force error
/// or non-finite state instead of failing.
pub fn rk4_rollout<E, F>(initial: &State, h: f64, n_steps: usize, mut force: F) -> Rollout
where
    E: std::fmt::Display,
    F: FnMut(&State) -> Result<Vec<f64>, E>,
{
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(initial.clone());
    let mut s = initial.clone();
    for step in 1..=n_steps {
        match rk4_step(&s, h, &mut force) {
            Ok(next) if finite(&next) => {
                s = next;
                states.push(s.clone());
            }
            Ok(_) => {
                return Rollout {
                    states,
                    failure: Some((step, "non-finite state".into())),
                }
            }
            Err(e) => {
                return Rollout {
                    states,
                    failure: Some((step, e.to_string())),
                }
            }
        }
    }
    Rollout { states, failure: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemKind;

    fn pure_ho(s: &State) -> Result<Vec<f64>, DynamicsError> {
        Ok(vec![-s.q[0]])
    }

    #[test]
    fn harmonic_oscillator_matches_cosine() {
        let mut s = State::new(vec![1.0], vec![0.0], 0.0);
        for _ in 0..100 {
            s = rk4_step(&s, 0.01, &mut pure_ho).unwrap();
        }
        assert!((s.q[0] - 1f64.cos()).abs() < 1e-8);
        assert!((s.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_energy_drift() {
        let r = rk4_rollout(&State::new(vec![1.0], vec![0.0], 0.0), 0.01, 1000, pure_ho);
        assert!(r.failure.is_none());
        let e = |s: &State| 0.5 * (s.q[0] * s.q[0] + s.qdot[0] * s.qdot[0]);
        let e0 = e(&r.states[0]);
        for s in &r.states {
            assert!((e(s) - e0).abs() <= 1e-6);
        }
    }

    #[test]
    fn trajectory_has_n_plus_one_samples() {
        let spec = SystemSpec::new(SystemKind::GravRadiation);
        let cfg = SimConfig {
            initial_state: State::new(vec![0.0, 2.0], vec![-1.0, 0.0], 0.0),
            step_size: 0.05,
            n_steps: 300,
            seed: 0,
        };
        let data = rk4_integrate(&spec, &cfg).unwrap();
        assert_eq!(data.len(), 301);
        assert!((data[300].state.t - 15.0).abs() < 1e-9);
        // inspiral: radius shrinks
        let r = |s: &ForceSample| s.state.q[0].hypot(s.state.q[1]);
        assert!(r(&data[300]) < r(&data[0]));
    }

    #[test]
    fn time_passes_through_stages() {
        // q̈ = cos t from rest: q̇(t) = sin t
        let mut f = |s: &State| Ok::<_, DynamicsError>(vec![s.t.cos()]);
        let mut s = State::new(vec![0.0], vec![0.0], 0.0);
        for _ in 0..100 {
            s = rk4_step(&s, 0.01, &mut f).unwrap();
        }
        assert!((s.qdot[0] - 1f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let spec = SystemSpec::new(SystemKind::HoLd);
        let mut cfg = SimConfig {
            initial_state: State::new(vec![1.0], vec![0.0], 0.0),
            step_size: 0.0,
            n_steps: 10,
            seed: 0,
        };
        assert!(rk4_integrate(&spec, &cfg).is_err());
        cfg.step_size = 0.1;
        cfg.n_steps = 0;
        assert!(rk4_integrate(&spec, &cfg).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let r = rk4_rollout(&State::new(vec![1.0], vec![0.0], 0.0), 1.0, 2000, |s: &State| {
            Ok::<_, DynamicsError>(vec![s.q[0].powi(3) * 1e3])
        });
        assert!(r.failure.is_some());
    }
}
