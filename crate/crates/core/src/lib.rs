//! Numerical laboratory for weight-decayed gradient descent on
//! scale-invariant objectives.

// `!(x > 0.0)` style guards are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beta_seq;
pub mod certify;
pub mod dynamics;
pub mod envelope;
pub mod io;
pub mod error;
pub mod experiment;
pub mod jumps;
pub mod objective;
pub mod phases;
pub mod plot;
pub mod registry;
pub mod sinet;
pub mod vector;
pub mod verify;

pub use error::{Error, Result};
