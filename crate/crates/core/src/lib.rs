//! Modelling of type-II spontaneous parametric down-conversion in multimode
//! ion-exchanged KTP waveguides: guided modes, quasi-phase-matching, joint
//! spectra, heralded spatial states and a simulated beam-quality bench.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamlab;
pub mod error;
pub mod grid;
pub mod interp;
pub mod jsa;
pub mod material;
pub mod modesolver;
pub mod phasematch;
pub mod roots;

pub use error::{Error, Result};
