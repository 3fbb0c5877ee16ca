//! Meta-learned sparse gradient masks.
//!
//! The crate learns, alongside a network initialization, *which* parameters an inner
//! loop of gradient descent is allowed to change. The mechanism is shared by three
//! regimes:
//!
//! - [`fewshot`]: episodic meta-training on synthetic regression and classification tasks
//! - [`continual`]: a replay-based streaming learner with per-parameter rates or masks
//! - [`online`]: online adaptation under hidden task switches
//!
//! [`nn`] provides the small MLP these run on, [`mask`] the gradient modulation and its
//! first-order meta-update, and [`experiment`] configuration, metrics files and
//! checkpoints.

pub mod continual;
pub mod error;
pub mod experiment;
pub mod fewshot;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod online;
pub mod patterns;
pub mod rng;

pub use error::{Error, Result};
