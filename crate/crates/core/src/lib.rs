//! Pseudo-spectral compressible MHD on the periodic box, together with the
//! harmonic-analysis and Lagrangian machinery used to verify it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod energy;
pub mod error;
pub mod initial;
pub mod lagrangian;
pub mod littlewood_paley;
pub mod local_solver;
pub mod mhd;
pub mod spectral;

pub use error::{Error, Result};
