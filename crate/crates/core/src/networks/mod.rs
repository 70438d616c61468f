//! Network parametrizations of the two force branches.
//!
//! The conservative branch is a Lagrangian ([`LagrangianModel`]), either an
//! MLP or a linear template over closed-form features, turned into a force
//! by the Euler-Lagrange equations. The non-conservative branch is a plain
//! MLP regressor ([`UanModel`]). Parameters live in flat [`ParamVector`]s.

mod jet;
mod lagrangian;
mod mlp;
mod param;
mod template;
mod uan;

pub use jet::{jet_backward, jet_forward, Channels, JetTape};
pub use lagrangian::{ChannelTape, LagrangianModel, LnnForces, TEMPLATE_INIT};
pub use mlp::{mlp_backward, mlp_forward, Activation, Init, MlpSpec, MlpTape, LEAKY_SLOPE};
pub use param::{ParamVector, Segment};
pub use template::TemplateLagrangian;
pub use uan::UanModel;

use crate::autodiff::AutodiffError;
use crate::dynamics::State;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("singular mass matrix at q = {:?}, q̇ = {:?} (condition estimate {condition:e})", state.q, state.qdot)]
    SingularMass { state: State, condition: f64 },
}
