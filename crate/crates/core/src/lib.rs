#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gp;
pub mod seed;
pub mod space;

pub use error::{Error, Result};
pub mod calibrate;
pub mod cli;
pub mod engine;
pub mod hyperband;
pub mod losses;
pub mod service;
pub mod testbed;
pub mod tpe;
