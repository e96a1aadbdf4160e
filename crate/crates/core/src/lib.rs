// Negated comparisons reject NaN parameters along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod model;
pub mod objectives;
pub mod readout;
pub mod rng;
pub mod video;

pub use error::{Error, Result};
