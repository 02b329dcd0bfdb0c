#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geodata;
pub mod harness;
pub mod filter;
pub mod matcher;
pub mod mission;
pub mod simworld;

pub use error::{Error, Result};
