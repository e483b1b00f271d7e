//! Few-shot keyword spotting: Speech Commands dataset synthesis, episodic
//! prototypical-network training and evaluation, checkpoints and the `fskws`
//! command line. The numeric core lives in `fskws-core`.

pub mod cli;
pub mod dataset;
pub mod synthetic;
pub mod trainer;
pub mod wav;

pub use fskws_core as numeric;
