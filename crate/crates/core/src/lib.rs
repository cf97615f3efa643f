//! Robust safe control for control-affine systems whose dynamics are only
//! known up to a bounded, state-dependent uncertainty set.
//!
//! The crate covers the whole pipeline:
//!
//! * [`dynamics`]: uncertain SCARA arm and Segway models plus parameter sampling,
//! * [`safety_index`]: the parameterized safety index family and its gradient,
//! * [`bounds`]: polytope / ellipsoid / constant uncertainty bounds and their
//!   projection onto Lie-derivative bounds,
//! * [`solvers`]: the dense QP, LP and second-order-cone engines and the three
//!   robust safe control filters built on them,
//! * [`synthesis`]: feasible-rate evaluation and CMA-ES search over index parameters,
//! * [`experiments`]: closed-loop simulation and the feasibility / invariance studies.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bounds;
pub mod dynamics;
mod error;
pub mod experiments;
pub mod linalg;
pub(crate) mod math;
pub mod safety_index;
pub mod solvers;
pub mod stats;
pub mod synthesis;
pub mod types;

pub use error::Error;

pub type Result<T> = core::result::Result<T, Error>;
