//! Deterministic train/val/test assignment.

use crate::error::{Error, Result};
use crate::rng::Stream;

use super::{Manifest, Split};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        if !(r.train > 0.0 && r.val > 0.0 && r.test > 0.0) {
            return Err(Error::InvalidArgument(
                "split ratios must all be positive".into(),
            ));
        }
        if ((r.train + r.val + r.test) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must sum to 1, got {}",
                r.train + r.val + r.test
            )));
        }
        Ok(r)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

/// Shuffle the images with the seeded generator and assign
/// floor(n * ratio) images per split in train/val/test order; anything left
/// over lands in train.
pub fn split(manifest: &Manifest, ratios: SplitRatios, seed: u64) -> Result<Manifest> {
    let n = manifest.images.len();
    if n < 3 {
        return Err(Error::DatasetTooSmall);
    }
    let mut order: Vec<usize> = (0..n).collect();
    Stream::derived(seed, "split").shuffle(&mut order);

    let n_train = (n as f64 * ratios.train).floor() as usize;
    let n_val = (n as f64 * ratios.val).floor() as usize;
    let n_test = (n as f64 * ratios.test).floor() as usize;

    let mut out = manifest.clone();
    for rec in &mut out.images {
        rec.split = Split::Train; // leftovers after the three blocks
    }
    for (pos, &idx) in order.iter().enumerate() {
        out.images[idx].split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else if pos < n_train + n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(out)
}
