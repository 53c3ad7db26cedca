//! Rate-distortion generalization bounds on finite alphabets.
//!
//! * [`infocore`]: distributions and exact information measures.
//! * [`rd_solver`]: Blahut-Arimoto, constrained rate-distortion, KL-ball suprema.
//! * [`bounds`]: generalization bound evaluators.
//! * [`covering_sim`]: block-covering simulation and identity checkers.
//! * [`harness`]: enumerable learning problems and ground truth.
//! * [`suite`]: the end-to-end check suite shared by the CLI and tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod covering_sim;
pub mod error;
pub mod infocore;
pub mod harness;
pub mod par;
pub mod rd_solver;
pub mod suite;

pub use error::{RdError, Result};
