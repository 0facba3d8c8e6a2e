//! Numerical laboratory for rough fractional singular integrals on
//! homogeneous groups.

pub mod error;
pub mod experiments;
pub mod conv;
pub mod field;
pub mod group;
pub mod heat;
pub mod kernels;
pub mod numerics;
pub mod operators;
pub mod polar;
pub mod sparse;
pub mod poly;
pub mod weights;

pub use error::{Error, Result};
pub use field::{GridSpec, ScalarField};
pub use group::GroupSpec;
