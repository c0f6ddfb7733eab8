//! Attentive deep regression tracker.
//!
//! A two-stream convolutional regressor that predicts the target box in the
//! current frame from crops of the previous and current frames, with
//! per-channel attention over multi-level features. The crate covers the
//! differentiable substrate, box geometry, the network variants, a synthetic
//! sequence generator, offline training, online tracking and the
//! accuracy/robustness evaluation protocol.

pub mod data;
pub mod error;
pub mod geometry;
pub mod network;
pub mod numerics;
pub mod parallel;
pub mod seeds;
pub mod trackeval;

pub use error::{Error, Result};
