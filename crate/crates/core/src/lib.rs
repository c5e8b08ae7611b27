//! Time-harmonic anisotropic Maxwell solver on structured tetrahedral boxes,
//! with boundary-control constructions for localized fields and Runge
//! approximation.

// Negated comparisons are deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod localization;
pub mod materials;
pub mod measurement;
pub mod mesh;
pub mod oracles;
pub mod quadrature;
pub mod runge;
pub mod solver;
pub mod vtk;

pub use error::{Error, Result};
