//! Model-free trajectory tracking by adaptive dynamic programming.
//!
//! The pipeline learns an affine tracking controller
//! `u = −(L_x x + L_ref p + L_off)` from recorded transitions of a plant it
//! never sees the equations of:
//!
//! * [`reference`] approximates the upcoming reference window by a local
//!   polynomial and propagates its parameters in time,
//! * [`qfunc`] holds the quadratic Q-function and the closed-form greedy policy,
//! * [`lspi`] evaluates policies by LSTDQ on a frozen batch and iterates,
//! * [`plant`] simulates one axis of a ball-on-plate rig and records excitation data,
//! * [`baseline`] solves the same tracking problem with the model, as an oracle,
//! * [`experiment`] wires everything into reproducible runs with CSV/JSON output.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod error;
pub mod experiment;
pub mod lspi;
pub mod plant;
pub mod qfunc;
pub mod reference;

pub use error::{Error, Result};
