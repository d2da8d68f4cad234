//! Variable-input deep operator networks.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod model;
pub mod nn;
pub mod pde;
pub mod pipeline;
pub mod seed;
pub mod sensors;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
