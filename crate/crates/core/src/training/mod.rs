//! Penalized two-branch objective, Adam, warm-started λ sweeps and the
//! phase-transition test.

mod adam;
mod loss;
mod model;
mod sweep;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss_from_forces, penalty_bounds_hold, LossNorm, LossReport, ROOT_GUARD};
pub use model::{
    misalignment, misalignment_of, Branches, MisalignmentReport, Nnphd, NnphdParams, Prediction, SingularPolicy,
};
pub use sweep::{
    detect_from_points, detect_phase_transition, lambda_sweep, phase_jump, read_sweep_csv, write_sweep_csv,
    write_trace_csv, Detection, SweepEntry, SweepResult, SweepRow, DEFAULT_LAMBDA_GRID, DEFAULT_TAU, HIGH_WINDOW,
    LOW_WINDOW,
};
pub use trainer::{default_schedule, evaluate, train, Evaluation, TraceRow, TrainConfig, TrainOutcome};

use crate::dynamics::State;
use crate::networks::NetworkError;

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("singular mass matrix{} at q = {:?}, q̇ = {:?} (condition estimate {condition:e})",
        step.map(|s| format!(" at step {s}")).unwrap_or_default(), state.q, state.qdot)]
    Singular {
        step: Option<usize>,
        state: State,
        condition: f64,
    },
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("samples lack the true conservative/non-conservative split")]
    MissingGroundTruth,
    #[error("λ grid does not cover the transition: {0}")]
    InsufficientGrid(String),
    #[error("at λ = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<TrainingError>,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainingError {
    pub(crate) fn singular(step: Option<usize>, state: &State, condition: f64) -> Self {
        TrainingError::Singular {
            step,
            state: state.clone(),
            condition,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            TrainingError::NonFinite { what, .. } => TrainingError::NonFinite { step, what },
            other => other,
        }
    }

    /// Whether the failure is numerical rather than a configuration problem.
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainingError::Singular { .. } | TrainingError::NonFinite { .. } => true,
            TrainingError::Network(NetworkError::SingularMass { .. }) => true,
            TrainingError::Network(NetworkError::Autodiff(_)) => true,
            TrainingError::AtLambda { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
