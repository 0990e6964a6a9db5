//! Two-dimensional selective state-space scan.
//!
//! * [`tensor`]: grids, scan parameters and the T2DM file format.
//! * [`reference`]: sequential oracles for every recurrence.
//! * [`engine`]: the tiled carry-prefix engine, its backward pass and the
//!   baselines it is compared against.
//! * [`memsim`]: closed-form main-store traffic, padding and FLOP models.
//! * [`model`]: a forward-only toy multiple-instance aggregator built around
//!   the scan.
//! * [`bench`] and [`cli`]: experiment drivers behind the `scan2d` binary.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod error;
pub mod memsim;
pub mod model;
pub mod problem;
pub mod reference;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use problem::Problem;
