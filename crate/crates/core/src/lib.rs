//! Truncated Fock-space simulation of heralded magnon entanglement between
//! two cavity-magnon arms, with exact and Monte Carlo witness evaluation.

// `!(x > 0.0)` is used throughout to reject NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod montecarlo;
pub mod protocol;

pub use error::{Error, Result};
pub use fock::{DensityOperator, ModeOperator, ModeRegistry, MultiModeState, Tolerances};
