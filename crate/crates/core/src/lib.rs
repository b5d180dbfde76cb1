// `!(x > 0.0)` is used on purpose so that NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod fdlp;
pub mod frontend;
pub mod infotheory;
pub mod io;
pub mod selftest;

pub use error::{Error, Result};
