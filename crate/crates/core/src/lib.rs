// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lnl;
pub mod model;
pub mod nn;
pub mod pretext;
pub mod seed;

pub use error::{Error, Result};
