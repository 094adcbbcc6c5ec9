//! File formats, parallel drivers and the command line around
//! [`terrapose_core`].
//!
//! - [`formats`]: ASCII grids, PGM/PPM, CSV tables, JSON documents, f32 bands.
//! - [`parallel`]: rayon versions of the renderers with thread-count
//!   independent output.
//! - [`cli`]: the `terrapose` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod formats;
pub mod output;
pub mod parallel;
pub mod synth;

pub use error::CliError;
