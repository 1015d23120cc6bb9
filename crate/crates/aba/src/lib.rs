//! Files, benchmark driver and command line for `aba-core`.
//!
//! Images go through [`imageio`], the binary flow / parameter / checkpoint
//! dumps through [`formats`], and sequence directories through
//! [`sequence`]. [`runner`] evaluates attacks over many sequences in
//! parallel, [`csvio`] and [`report`] turn the results into files, and
//! [`cli`] wires everything to the `aba` binary.

pub mod cli;
pub mod config;
pub mod csvio;
mod error;
pub mod formats;
pub mod imageio;
pub mod report;
pub mod runner;
pub mod sequence;

pub use config::RunConfig;
pub use error::{Error, Result};
