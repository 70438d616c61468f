//! Ground-truth physics: the registered force fields with their analytic
//! conservative/non-conservative split, a fixed-step RK4 integrator and the
//! dataset generators used by the experiments.

mod integrate;
mod io;
mod sampling;
mod system;

pub use integrate::{rk4_integrate, rk4_rollout, rk4_step, Rollout, SimConfig};
pub use io::{format_real, read_samples_csv, write_samples_csv};
pub use sampling::{apply_coverage_wedge, apply_imbalance, in_wedge, sample_gaussian_states, DataQualityConfig};
pub use system::{true_force, ForceSplit, SystemKind, SystemSpec, SINGULAR_DISTANCE};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("system {system} has no parameter `{name}`")]
    UnknownParam { system: String, name: String },
    #[error("parameter `{name}` must be finite, got {value}")]
    InvalidParam { name: String, value: f64 },
    #[error("state has dimension {got}, system expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("force singular at t = {t}: separation {distance:e}")]
    Singularity { t: f64, distance: f64 },
    #[error("integration diverged at step {step}")]
    Diverged { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("malformed dataset line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Point in the extended phase space `(q, q̇, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn new(q: Vec<f64>, qdot: Vec<f64>, t: f64) -> Self {
        assert_eq!(q.len(), qdot.len(), "q and q̇ must have equal length");
        State { q, qdot, t }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// A state with its oracle acceleration and, when known, the true split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub state: State,
    pub f: Vec<f64>,
    pub f_c_true: Option<Vec<f64>>,
    pub f_n_true: Option<Vec<f64>>,
}

impl ForceSample {
    /// Evaluates the oracle of `spec` at `state`.
    pub fn observe(spec: &SystemSpec, state: State) -> Result<Self, DynamicsError> {
        let (f, fc, fn_) = true_force(spec, &state)?;
        Ok(ForceSample {
            state,
            f,
            f_c_true: Some(fc),
            f_n_true: Some(fn_),
        })
    }
}

/// Root mean square of the non-conservative truth over all samples and
/// components; `None` when any sample lacks the split.
pub fn nonconservative_rms(samples: &[ForceSample]) -> Option<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for s in samples {
        for v in s.f_n_true.as_ref()? {
            acc += v * v;
            count += 1;
        }
    }
    (count > 0).then(|| (acc / count as f64).sqrt())
}

/// Mean of `|f_n|^p` over samples and components, raised to `1/p`: the
/// non-conservative truth measured in the recovery-error norm.
pub fn nonconservative_norm(samples: &[ForceSample], p: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for s in samples {
        for v in s.f_n_true.as_ref()? {
            acc += v.abs().powf(p);
            count += 1;
        }
    }
    (count > 0).then(|| (acc / count as f64).powf(1.0 / p))
}
