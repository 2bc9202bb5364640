// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numkit;

pub use error::{Error, FormatError, Result};
pub mod dataio;
pub mod vae;
pub mod teacher;
pub mod explain;
pub mod metrics;
pub mod cli;
