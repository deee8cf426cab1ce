//! Learning dynamics of neuron specialisation.
//!
//! The crate is organised around four layers:
//!
//! * [`linear_dynamics`]: closed-form gradient-flow solution for a single
//!   two-layer linear pathway, escaping and hitting times, and a full-batch
//!   gradient-descent simulator used as the reference.
//! * [`race_phase`]: the two-pathway neural race and its specialisation
//!   phase diagram.
//! * [`meanfield`]: the two-layer teacher-student model with scaled-error
//!   activation, online SGD at finite input dimension, order parameters,
//!   Gaussian averages and the order-parameter ODEs.
//! * [`continual`]: two-task protocols, entropy-based specialisation
//!   measures, forgetting sweeps and elastic weight consolidation.

pub mod continual;
pub mod error;
pub mod linear_dynamics;
pub mod meanfield;
pub mod race_phase;
pub mod rng;

pub use error::{Error, Result};
