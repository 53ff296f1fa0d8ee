//! Iterative coupling of a bag-level multiple-instance classifier with its
//! instance embedder.
//!
//! Training alternates between two phases. The classifier phase freezes the
//! embedder and fits an aggregator plus a linear bag classifier on
//! (optionally mixed-up) bags. The embedder phase freezes that classifier,
//! treats it as a teacher for single instances, and fine-tunes a noisy student
//! copy of the embedder, with per-instance weights derived from the teacher's
//! attention scores.

pub mod augment;
pub mod bagdata;
pub mod checkpoint;
pub mod distill;
pub mod error;
pub mod gradcore;
pub mod metrics;
pub mod milnet;
pub mod orchestrator;
pub mod rng;

pub use error::{Error, Result};
