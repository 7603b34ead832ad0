#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait, clippy::needless_range_loop)]

pub mod bijection;
pub mod bounds;
pub mod data;
pub mod error;
pub mod eval;
pub mod init;
pub mod linalg;
pub mod loss;
pub mod policy;
pub mod ren;
pub mod rollout;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases used by training, certification and the CLI.
pub type Policy64 = policy::Policy<f64>;
pub type Dataset64 = data::Dataset<f64>;
