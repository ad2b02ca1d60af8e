//! Multi-granularity zero-shot alignment of skeleton features with text
//! anchors, and streaming test-time refinement of those anchors.

// `!(x >= 0.0)` is used on purpose so NaN is rejected; index loops and
// `&a * &b` are the ndarray idiom.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::op_ref)]

pub mod alignment;
pub mod anchors;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod gate;
pub mod optim;
pub mod refinement;
pub mod rng;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
