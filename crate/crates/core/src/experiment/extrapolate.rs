use std::collections::BTreeMap;

use serde::Serialize;

use super::artifacts::{with_writer, write_json, write_params, write_samples};
use super::config::{DataConfig, ExperimentConfig};
use super::runs::datasets;
use super::ExperimentError;
use crate::dynamics::{format_real, rk4_integrate, rk4_rollout, SimConfig, State, SystemSpec};
use crate::training::{evaluate, train, write_trace_csv, Branches, TrainConfig};

/// Why and where a learned rollout stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub diverged: bool,
    /// Last step with a finite state.
    pub last_step: usize,
    pub reason: Option<String>,
}

/// One time step of the comparison. Columns of a diverged rollout hold NaN
/// past the divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtrapolationRow {
    pub t: f64,
    pub theta1_true: f64,
    pub theta1_nnphd: f64,
    pub theta1_lnn: f64,
    pub theta1_blackbox: f64,
    pub e_true: f64,
    pub e_nnphd: f64,
    pub e_lnn: f64,
    pub e_blackbox: f64,
}

#[derive(Debug, Clone)]
pub struct ExtrapolationReport {
    pub rows: Vec<ExtrapolationRow>,
    /// Keyed by `nnphd`, `lnn`, `blackbox`.
    pub divergence: BTreeMap<String, Divergence>,
}

const HEADER: &str = "t,theta1_true,theta1_nnphd,theta1_lnn,theta1_blackbox,E_true,E_nnphd,E_lnn,E_blackbox";

const MODELS: [(&str, Branches); 3] = [
    ("nnphd", Branches::Both),
    ("lnn", Branches::LnnOnly),
    ("blackbox", Branches::UanOnly),
];

fn column(states: &[State], len: usize, f: impl Fn(&State) -> f64) -> Vec<f64> {
    (0..len).map(|k| states.get(k).map_or(f64::NAN, &f)).collect()
}

/// Trains the full model and both single-branch ablations on the early part
/// of a trajectory, then rolls each out from the initial state and compares
/// the first angle and the true energy against the ground truth.
pub(crate) fn extrapolate(cfg: &ExperimentConfig) -> Result<ExtrapolationReport, ExperimentError> {
    let systems = cfg.system_list();
    let sys = &systems[0];
    let spec: SystemSpec = sys.spec()?;
    let data = cfg.data_for(sys);
    let DataConfig::Trajectory {
        initial_state,
        step_size,
        n_steps,
        ..
    } = data
    else {
        unreachable!("validated")
    };
    let horizon = cfg.extrapolation.horizon.unwrap_or(*step_size * *n_steps as f64);
    let steps = (horizon / step_size).round() as usize;
    if steps == 0 {
        return Err(ExperimentError::Config(
            "extrapolation horizon is shorter than one step".into(),
        ));
    }
    let (train_set, _) = datasets(&spec, data, cfg.seed)?;
    let truth = rk4_integrate(
        &spec,
        &SimConfig {
            initial_state: initial_state.clone(),
            step_size: *step_size,
            n_steps: steps,
            seed: cfg.seed,
        },
    )?;
    let truth: Vec<State> = truth.into_iter().map(|s| s.state).collect();
    let model = cfg.model_for(sys).build(&spec)?;
    let base = cfg.train.config(cfg.train.norm()?, cfg.seed);
    let init = model.init_params(cfg.seed);
    let dir = &cfg.output_dir;
    write_samples(&dir.join("train.csv"), &train_set)?;

    let mut rollouts = Vec::with_capacity(MODELS.len());
    let mut divergence = BTreeMap::new();
    for (name, branches) in MODELS {
        let c = TrainConfig {
            branches,
            ..base.clone()
        };
        let out = train(&model, &train_set, &c, &init)?;
        evaluate(&model, &out.params, &train_set, &c)?;
        with_writer(&dir.join(format!("trace_{name}.csv")), |w| {
            write_trace_csv(w, &out.trace)
        })?;
        write_params(&dir.join(format!("{name}_lnn.bin")), &out.params.c)?;
        write_params(&dir.join(format!("{name}_uan.bin")), &out.params.n)?;
        let roll = rk4_rollout(initial_state, *step_size, steps, |s: &State| {
            model.force(&out.params, s, branches)
        });
        divergence.insert(
            name.to_string(),
            Divergence {
                diverged: roll.failure.is_some(),
                last_step: roll.states.len() - 1,
                reason: roll.failure.as_ref().map(|(_, r)| r.clone()),
            },
        );
        rollouts.push(roll.states);
    }

    let len = steps + 1;
    let theta: Vec<Vec<f64>> = rollouts.iter().map(|r| column(r, len, |s| s.q[0])).collect();
    let energy: Vec<Vec<f64>> = rollouts
        .iter()
        .map(|r| column(r, len, |s| spec.conservative_energy(s)))
        .collect();
    let rows: Vec<ExtrapolationRow> = (0..len)
        .map(|k| ExtrapolationRow {
            t: truth[k].t,
            theta1_true: truth[k].q[0],
            theta1_nnphd: theta[0][k],
            theta1_lnn: theta[1][k],
            theta1_blackbox: theta[2][k],
            e_true: spec.conservative_energy(&truth[k]),
            e_nnphd: energy[0][k],
            e_lnn: energy[1][k],
            e_blackbox: energy[2][k],
        })
        .collect();
    with_writer(&dir.join("extrapolation.csv"), |w| {
        use std::io::Write;
        writeln!(w, "{HEADER}")?;
        for r in &rows {
            let v = [
                r.t,
                r.theta1_true,
                r.theta1_nnphd,
                r.theta1_lnn,
                r.theta1_blackbox,
                r.e_true,
                r.e_nnphd,
                r.e_lnn,
                r.e_blackbox,
            ];
            let line: Vec<String> = v.iter().map(|x| format_real(*x)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })?;
    write_json(&dir.join("extrapolation.json"), &divergence)?;
    Ok(ExtrapolationReport { rows, divergence })
}
