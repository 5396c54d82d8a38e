//! Robust ranking objectives built from transformed logistic losses.
//!
//! Two tracks share the same loss family:
//!
//! * a feature-based track ([`ltr`]) that learns a linear scorer by
//!   minimizing a smooth, non-convex bound on DCG, with model selection on a
//!   validation split;
//! * a latent collaborative retrieval track ([`lcr`], [`parallel`]) that
//!   learns user/item embeddings from positive-only interactions using a
//!   linearized bound whose stochastic gradient costs O(d) per update, and a
//!   stratified variant that runs shared-nothing workers in one process.
//!
//! [`data`] reads LETOR-style feature files and user/item triplets and
//! generates synthetic instances; [`eval`] computes NDCG@k and precision@k.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod lcr;
pub mod loss;
pub mod ltr;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
