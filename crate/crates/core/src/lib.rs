#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod bounds;
pub mod dgp;
pub mod emploss;
pub mod error;
pub mod numeric;
pub mod population;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
