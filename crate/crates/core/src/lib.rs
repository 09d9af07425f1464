//! Cross-silo federated learning simulator.
//!
//! Runs FedAvg, FedProx and FedP3E (a one-shot, noise-perturbed Gaussian
//! mixture prototype exchange followed by prototype SMOTE augmentation) over
//! simulated silos. Every random choice is derived from a single run seed, so
//! two runs with the same configuration and data produce bit-identical
//! metrics regardless of thread scheduling.
//!
//! Module map:
//! - [`datakit`]: CSV ingestion, min-max scaling, stratified splits,
//!   non-IID partition plans and synthetic data.
//! - [`neuralnet`]: the dense classifier (dense, batch norm, dropout, L2,
//!   proximal term, Adam) with analytic gradients.
//! - [`gmmproto`]: per-class EM fitting, BIC selection and prototype noise.
//! - [`protoagg`]: server-side mini-batch k-means consolidation.
//! - [`smoteaug`]: interpolation between global prototypes.
//! - [`fedcore`]: the round loop, aggregation and communication accounting.
//! - [`cli`]: run configuration and result files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datakit;
pub mod error;
pub mod fedcore;
pub mod gmmproto;
pub mod neuralnet;
pub mod protoagg;
pub mod seeding;
pub mod smoteaug;

pub use error::{Error, Result};
