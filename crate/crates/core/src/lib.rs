// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capability;
pub mod cli;
pub mod control;
pub mod error;
pub mod flex;
pub mod model;
pub mod nlp;
pub mod powerflow;
pub mod vsm;

pub use error::{Error, Result};
