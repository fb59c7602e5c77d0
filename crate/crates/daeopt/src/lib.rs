//! Files, configuration and the `daeopt` command line on top of
//! [`daeopt_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, Result};
