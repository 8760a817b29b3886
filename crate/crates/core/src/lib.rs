//! Mutual alignment transfer learning on analytic dynamics.
//!
//! Two trust-region agents train side by side on a source system and a
//! dynamics-mismatched target system. A discriminator over short state
//! sequences tells the two apart, and its log-probabilities become
//! auxiliary rewards that pull both agents toward states the other one
//! visits.

pub mod advantage;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod trainer;
pub mod trpo;

pub use error::{Error, Result};
