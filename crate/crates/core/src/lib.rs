//! Decomposition of force fields into an energy-conserving part, represented
//! by a Lagrangian network, and a non-conservative residual, represented by a
//! black-box network.

pub mod autodiff;
pub mod dynamics;
pub mod experiment;
pub mod networks;
pub mod symbolic;
pub mod training;
