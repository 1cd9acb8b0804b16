//! Device activity detection for grant-free cell-free massive-MIMO uplinks.
//!
//! A federated single-hidden-layer perceptron is trained across access
//! points and benchmarked against centralized ISTA, FISTA and AMP
//! sparse-recovery detectors on the same seeded events.
//!
//! Module map:
//! - [`scenario`]: geometry, large-scale fading, pilots, activity draws
//! - [`channel`]: fading, received-signal synthesis, datasets
//! - [`slp`]: the perceptron, its loss, gradients and Adam
//! - [`federation`]: local training, aggregation, server step, fusion
//! - [`baselines`]: MMV ISTA/FISTA/AMP and the colocated transform
//! - [`eval`]: ROC/AUC and MAC accounting

pub mod baselines;
pub mod channel;
pub mod error;
pub mod eval;
pub mod federation;
pub mod rng;
pub mod scenario;
pub mod slp;

pub use error::{Error, Result};
