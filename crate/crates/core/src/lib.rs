//! Load balancing across k parallel servers in the non-degenerate slowdown
//! regime, where `lambda = (k - alpha) * mu` keeps a fixed number of spare
//! servers as k grows.
//!
//! The crate has three layers:
//!
//! * finite-k simulation: [`sim`] runs dispatch [`policies`] over job-size
//!   [`distributions`];
//! * the limiting diffusions and their stationary laws in [`diffusion`];
//! * exact reference values in [`oracles`], and replicated experiment
//!   grids in [`experiment`].

// Parameter guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod oracles;
pub mod policies;
pub mod quadrature;
pub mod sim;

pub use error::{Error, Result};
