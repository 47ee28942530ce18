//! Finite-volume engine for multi-species nonlinear drift-diffusion in
//! periodically perforated domains, the periodic cell problems, and the
//! homogenized limit model.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Stencil and rotation loops read better indexed.
#![allow(clippy::needless_range_loop)]

pub mod cell_problem;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod homogenized;
pub mod linalg;
pub mod micro;
pub mod mms;
pub mod nonlinearity;
pub mod output;
pub mod tensor;
pub mod transport;

pub use error::{Error, Result};
