//! Dual-task cross-modal video retrieval.
//!
//! A video/text joint embedding trained together with a multi-label concept
//! decoder on the video side, plus the search stack built on top of it:
//! indexing, fused embedding/concept scoring, Boolean query evaluation,
//! keyword-based result pruning and retrieval metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! anything else touching the operating system live in the `dualtask` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod boolean;
pub mod data;
pub mod encoding;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod index;
pub mod interpret;
pub mod layers;
pub(crate) mod math;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod ranking;
pub mod similarity;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use ranking::RankedList;
pub use tensor::Tensor2;
