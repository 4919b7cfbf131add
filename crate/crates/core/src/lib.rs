//! Desk-scale pipeline for studying frozen pre-trained visual representations
//! (PVRs) as perception modules for behavior-cloned control policies.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`backbone`]: the 5-stage convolutional encoder with intermediate-layer
//!   taps, random-feature baselines, freezing, and channel compression.
//! - [`pretrain`]: contrastive (momentum-queue) and supervised pretraining,
//!   augmentation policies, and image corpora.
//! - [`pvr`]: assembling frozen representations — layer selection, temporal
//!   fusion, goal concatenation, and the ground-truth oracle adapter.
//! - [`env`]: two deterministic pixel environments (GridNav, ArmReach) with
//!   scripted experts and the on-disk demonstration format.
//! - [`imitation`]: the two behavior-cloning recipes (recurrent nav policy,
//!   feed-forward control policy) with frozen/finetune/from-scratch modes.
//! - [`evalharness`]: rollouts, the two evaluation protocols, and multi-seed
//!   aggregation with confidence intervals.
//!
//! Everything is seeded and deterministic on a single machine: identical
//! (config, seed) pairs produce byte-identical datasets, loss curves, and
//! evaluation reports.

pub mod backbone;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod evalharness;
pub mod frame;
pub mod imitation;
pub mod nn;
pub mod pretrain;
pub mod pvr;

pub use error::{Error, Result};
pub use frame::ImageFrame;

use sha2::{Digest, Sha256};

/// Derives an independent RNG seed from a base seed and a role label, so the
/// many RNG streams in a run never alias each other.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    let mut s = String::with_capacity(64);
    for b in d {
        use std::fmt::Write;
        write!(s, "{:02x}", b).unwrap();
    }
    s
}
