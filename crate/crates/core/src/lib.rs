//! Low-rank linear and generalized linear bandits.
//!
//! Agents: [`lowloc::LowLocAgent`] (online-to-confidence-set conversion over an
//! ε-net of low-rank matrices), LowESTR/LowOFUL (nuclear-norm recovery followed by
//! a subspace-rotated OFUL) and plain OFUL as a baseline.

// `!(x > 0.0)` is how argument checks here reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod covering;
pub mod error;
pub mod forecaster;
pub mod harness;
pub mod linalg;
pub mod lowloc;
pub mod lowoful;
pub mod model;
pub mod recovery;
pub mod trace;

pub use error::{Error, Result};
pub use model::{ArmMatrix, ArmSet, BanditInstance, LinkKind, LinkSpec};
