//! Anchor-free single-category detector with an optional CBAM attention
//! block at the backbone tail, plus the dataset, augmentation, annotation
//! bootstrap, training, and evaluation machinery around it.
//!
//! Heavy stages (augmentation, batch gradients, evaluation) run data-parallel
//! through [`parallel`]; per-item seeds and ordered reductions keep every
//! worker count bit-identical to the single-threaded reference.

pub mod augment;
pub mod autodiff;
pub mod cbam;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imagebuf;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
