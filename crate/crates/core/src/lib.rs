//! Dataset distillation into a conditional generator by matching global
//! logits and local intermediate features of randomly initialized networks.
//!
//! Pipeline: [`gantrain`] pretrains a conditional GAN, [`distill`] refines the
//! generator against the real data, [`deploy`] synthesizes distilled sets of
//! any size, [`evalharness`] trains classifiers on them and [`report`] renders
//! grids, plots and tables.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod deploy;
pub mod distill;
pub mod error;
pub mod evalharness;
pub mod fixtures;
pub mod gantrain;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
