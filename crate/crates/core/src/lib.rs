//! Age-of-infection epidemic toolkit.
//!
//! Four mutually validating layers of one model:
//!
//! * [`sim`]: exact event-driven simulation of a finite population in which
//!   each infected individual carries an i.i.d. disease course (a point
//!   process of contact ages plus a compartment trajectory) and contacts are
//!   thinned by a time-varying contact rate `c(t)`;
//! * [`solver`]: the deterministic large-population limit, i.e. the
//!   Kermack-McKendrick age-structured equation reduced to a nonlinear delay
//!   equation for the cumulative incidence `B(t)`;
//! * [`tree`]: the two-type Poisson Galton-Watson tree whose active geodesic
//!   length has distribution `B(t)/S0`;
//! * [`chain`]: the backward transmission chain, an h-transform of a
//!   renewal process with killing.
//!
//! [`kernels`] and [`courses`] hold the shared epidemiological inputs,
//! [`analysis`] and [`validation`] bind the layers together, and
//! [`config`] drives the `epi` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod chain;
pub mod config;
pub mod courses;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod tree;
pub mod validation;

pub use error::{Error, Result};
