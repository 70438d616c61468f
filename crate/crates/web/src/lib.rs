//! Browser demo: simulate a registered system, decompose its force field at
//! one penalty weight, and run a small λ sweep with the non-conservation test.
//! Every export takes plain numbers and returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use nnphd::dynamics::{rk4_integrate, sample_gaussian_states, ForceSample, SimConfig, State, SystemKind, SystemSpec};
use nnphd::experiment::ModelConfig;
use nnphd::training::{
    detect_from_points, evaluate, lambda_sweep, misalignment, train, Branches, LossNorm, Nnphd, TrainConfig,
};

/// Short schedule so a browser run finishes in seconds.
const DEMO_SCHEDULE: [(f64, usize); 2] = [(1e-2, 200), (1e-3, 200)];
const DEMO_SAMPLES: usize = 300;
const PROFILE_POINTS: usize = 41;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("{0}")]
    Dynamics(#[from] nnphd::dynamics::DynamicsError),
    #[error("{0}")]
    Training(#[from] nnphd::training::TrainingError),
    #[error("{0}")]
    Experiment(#[from] nnphd::experiment::ExperimentError),
    #[error("{0}")]
    Input(String),
}

impl From<DemoError> for JsValue {
    fn from(e: DemoError) -> JsValue {
        JsValue::from_str(&e.to_string())
    }
}

#[derive(Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub q0: Vec<f64>,
    pub energy: Vec<f64>,
}

#[derive(Serialize)]
pub struct Decomposition {
    pub l_e: f64,
    pub l_b: f64,
    pub m_c: f64,
    pub m_n: f64,
    /// Velocities at which the branch profiles below are sampled, with q = 0.
    pub qdot: Vec<f64>,
    pub f_c: Vec<f64>,
    pub f_n: Vec<f64>,
    pub f_c_true: Vec<f64>,
    pub f_n_true: Vec<f64>,
}

#[derive(Serialize)]
pub struct SweepSummary {
    pub lambda: Vec<f64>,
    pub l_e: Vec<f64>,
    pub jump: f64,
    pub tau: f64,
    pub is_nonconservative: bool,
}

fn spec(system: &str) -> Result<SystemSpec, DemoError> {
    Ok(SystemSpec::new(system.parse::<SystemKind>()?))
}

fn setup(system: &str, p: u8, seed: u64) -> Result<(SystemSpec, Nnphd, Vec<ForceSample>, TrainConfig), DemoError> {
    let spec = spec(system)?;
    if spec.n() != 1 {
        return Err(DemoError::Input(format!(
            "{system} is not a one-dimensional toy system"
        )));
    }
    if !(1..=3).contains(&p) {
        return Err(DemoError::Input(format!("norm order {p} is not 1, 2 or 3")));
    }
    let model = ModelConfig::default().build(&spec)?;
    let data = sample_gaussian_states(&spec, DEMO_SAMPLES, seed)?;
    let cfg = TrainConfig {
        norm: LossNorm::P(p),
        lr_schedule: DEMO_SCHEDULE.to_vec(),
        seed,
        ..TrainConfig::default()
    };
    Ok((spec, model, data, cfg))
}

/// RK4 trajectory of a one- or two-dimensional system from `(q, q̇)`.
pub fn simulate_system(system: &str, initial: &[f64], step_size: f64, n_steps: usize) -> Result<Trajectory, DemoError> {
    let spec = spec(system)?;
    let n = spec.n();
    if initial.len() != 2 * n {
        return Err(DemoError::Input(format!("{system} needs {} initial values", 2 * n)));
    }
    let cfg = SimConfig {
        initial_state: State::new(initial[..n].to_vec(), initial[n..].to_vec(), 0.0),
        step_size,
        n_steps,
        seed: 0,
    };
    let samples = rk4_integrate(&spec, &cfg)?;
    Ok(Trajectory {
        t: samples.iter().map(|s| s.state.t).collect(),
        q0: samples.iter().map(|s| s.state.q[0]).collect(),
        energy: samples.iter().map(|s| spec.conservative_energy(&s.state)).collect(),
    })
}

/// Trains both branches at one λ and reports the losses, the misalignment and
/// the learned split along the velocity axis.
pub fn decompose_system(system: &str, lambda: f64, p: u8, seed: u64) -> Result<Decomposition, DemoError> {
    let (spec, model, data, base) = setup(system, p, seed)?;
    let cfg = TrainConfig { lambda, ..base };
    let out = train(&model, &data, &cfg, &model.init_params(seed))?;
    let loss = evaluate(&model, &out.params, &data, &cfg)?.loss;
    let mis = misalignment(&model, &out.params, &data, Branches::Both)?;
    let qdot: Vec<f64> = (0..PROFILE_POINTS)
        .map(|k| -2.0 + 4.0 * k as f64 / (PROFILE_POINTS - 1) as f64)
        .collect();
    let probes = qdot
        .iter()
        .map(|&v| ForceSample::observe(&spec, State::new(vec![0.0], vec![v], 0.0)))
        .collect::<Result<Vec<_>, _>>()?;
    let states: Vec<&State> = probes.iter().map(|s| &s.state).collect();
    let pred = model.predict(&out.params, &states, Branches::Both)?;
    let truth = |f: fn(&ForceSample) -> &Option<Vec<f64>>| -> Vec<f64> {
        probes
            .iter()
            .map(|s| f(s).as_ref().map_or(f64::NAN, |v| v[0]))
            .collect()
    };
    Ok(Decomposition {
        l_e: loss.l_e,
        l_b: loss.l_b,
        m_c: mis.m_c,
        m_n: mis.m_n,
        f_c: pred.f_c,
        f_n: pred.f_n,
        f_c_true: truth(|s| &s.f_c_true),
        f_n_true: truth(|s| &s.f_n_true),
        qdot,
    })
}

/// Warm-started sweep over a fixed λ grid followed by the jump test.
pub fn sweep_system(system: &str, p: u8, tau: f64, seed: u64) -> Result<SweepSummary, DemoError> {
    let (_, model, data, base) = setup(system, p, seed)?;
    let grid = [0.1, 0.2, 0.5, 2.0, 5.0, 10.0];
    let result = lambda_sweep(&model, &data, None, &grid, &base, &model.init_params(seed))?;
    let points: Vec<(f64, f64)> = result.rows().iter().map(|r| (r.lambda, r.train_le)).collect();
    let det = detect_from_points(&points, tau)?;
    Ok(SweepSummary {
        lambda: points.iter().map(|p| p.0).collect(),
        l_e: points.iter().map(|p| p.1).collect(),
        jump: det.jump,
        tau: det.tau,
        is_nonconservative: det.is_nonconservative,
    })
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain numeric structs serialize")
}

#[wasm_bindgen]
pub fn simulate(system: &str, initial: &[f64], step_size: f64, n_steps: usize) -> Result<String, JsValue> {
    Ok(json(&simulate_system(system, initial, step_size, n_steps)?))
}

#[wasm_bindgen]
pub fn decompose(system: &str, lambda: f64, p: u8, seed: u32) -> Result<String, JsValue> {
    Ok(json(&decompose_system(system, lambda, p, u64::from(seed))?))
}

#[wasm_bindgen]
pub fn sweep(system: &str, p: u8, tau: f64, seed: u32) -> Result<String, JsValue> {
    Ok(json(&sweep_system(system, p, tau, u64::from(seed))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_reports_one_row_per_step() {
        let tr = simulate_system("HO+LD", &[1.0, 0.0], 0.01, 100).unwrap();
        assert_eq!(tr.t.len(), 101);
        assert!(tr.energy[100] < tr.energy[0]);
        assert!(simulate_system("HO+LD", &[1.0], 0.01, 10).is_err());
        assert!(simulate_system("nope", &[1.0, 0.0], 0.01, 10).is_err());
    }

    #[test]
    fn small_lambda_leaves_a_small_recovery_error() {
        let d = decompose_system("HO+LD", 0.1, 2, 0).unwrap();
        assert_eq!(d.f_c.len(), PROFILE_POINTS);
        assert!(d.l_e < 0.1, "L_e {}", d.l_e);
        assert!(decompose_system("damped-double-pendulum", 0.1, 2, 0).is_err());
    }

    #[test]
    fn sweep_flags_damping_and_json_round_trips() {
        let s = sweep_system("HO+LD", 1, 0.1, 0).unwrap();
        assert!(s.is_nonconservative, "jump {}", s.jump);
        let v: serde_json::Value = serde_json::from_str(&json(&s)).unwrap();
        assert_eq!(v["lambda"].as_array().unwrap().len(), 6);
    }
}
