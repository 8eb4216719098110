//! Spectral solver suite for the Doi–Onsager model of rod-like molecules on
//! the sphere `S^{D-1}`, `D >= 3`.
//!
//! * [`polybasis`]: zonal Legendre/Gegenbauer polynomials and quadrature.
//! * [`kernel`]: zonal expansion coefficients of the interaction kernel.
//! * [`solver`]: the axially symmetric self-consistency equation.
//! * [`bifurcation`]: critical concentrations, thresholds, indices and branches.
//! * [`dynamics`]: the axisymmetric Doi gradient flow.
//! * [`cli`]: command-line front end and table output.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bifurcation;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod kernel;
pub mod polybasis;
pub mod solver;

pub use error::{Error, Result};
