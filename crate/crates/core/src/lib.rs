//! Numeric core for few-shot keyword spotting.
//!
//! Everything here is pure computation over `alloc` collections: audio clip
//! arithmetic, the MFCC front end, a small reverse-mode autodiff tape, the four
//! embedding networks and the prototypical-network episode math. File formats,
//! dataset synthesis and the training loop live in the `fskws` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audio;
pub mod error;
pub mod features;
pub mod nets;
pub mod protonet;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
