//! Compositional-generalization split construction for multi-aspect labeled
//! corpora.
//!
//! The crate builds in-distribution / compositional splits of an attribute
//! combination space (Hold-Out, ACD, Few-Shot, plus Random and
//! minimum-divergence baselines), scores them with the attribute compound
//! divergence, aggregates benchmark metrics from externally computed scores,
//! and trains a small analytic conditional generator with a meta-learning
//! update that simulates compositional testing during training.

pub mod divergence;
pub mod error;
pub mod io;
pub mod meta_trainer;
pub mod metrics;
pub mod protocols;
pub mod sampler;
pub mod schema;

pub use error::{Error, Result};
