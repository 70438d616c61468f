//! Exact derivatives for the Euler-Lagrange force law and its training.
//!
//! Three interchangeable routes share one set of primitive rules:
//!
//! * [`Expression`]: an immutable graph, evaluated by an interpreter, with a
//!   reverse sweep for [`Expression::grad`] and nested duals for
//!   [`Expression::second_block`].
//! * [`Dual`]: nestable forward-mode numbers for small input blocks.
//! * [`Var`] on a [`Tape`]: reverse accumulation for parameter gradients,
//!   through nested duals and linear solves ([`grad_through`]).
//!
//! Kinks are resolved deterministically: `sign` and `abs` have derivative 0
//! at 0, and leaky-relu assigns 0 to its negative branch.

mod expr;
pub mod linalg;
pub mod primitive;
mod scalar;
mod tape;

pub use expr::{Expression, ExpressionBuilder, Sym};
pub use scalar::{Dual, Scalar};
pub use tape::{grad_through, Tape, Var};

use serde::{Deserialize, Serialize};

/// Role of a leaf slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    Coordinate,
    Velocity,
    Time,
    Parameter,
}

/// Index of a leaf slot in an [`Expression`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot(pub usize);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("domain error in {op} at node {node} (argument {value})")]
    Domain { node: usize, op: &'static str, value: f64 },
    #[error("singular matrix (condition estimate {condition:e})")]
    SingularMatrix { condition: f64 },
    #[error("expected {expected} leaf values, got {got}")]
    LeafCount { expected: usize, got: usize },
    #[error("no leaf slot {0}")]
    InvalidSlot(usize),
    #[error("invalid derivative request: {0}")]
    InvalidRequest(String),
}
