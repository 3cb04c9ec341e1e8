//! Self-supervised visual re-identification of individually patterned
//! animals.
//!
//! Detections on video are linked into tracklets ([`tracking`]), tracklets
//! supply anchor/positive/negative crops ([`tripletgen`]) for a metric
//! embedding trained with the reciprocal triplet loss ([`embedder`]), and a
//! Gaussian mixture over the embedding space yields identity clusters that
//! are ranked for annotation assistance ([`clustering`]). [`synthherd`]
//! generates a fully labelled synthetic herd so the whole chain can be run
//! and scored end to end ([`pipeline`]).

pub mod clustering;
pub mod detector_math;
pub mod embedder;
pub mod error;
pub mod geometry;
pub mod image;
pub mod pipeline;
pub mod seed;
pub mod synthherd;
pub mod tracking;
pub mod tripletgen;

pub use error::{Error, Result};

/// Label of an individual animal.
pub type IdentityId = u32;
