//! Kernelized concept erasure.
//!
//! The pipeline maps embeddings into an approximate kernel feature space
//! ([`nystrom`]), finds a rank-`k` subspace whose removal defeats every
//! linear classifier there ([`fantope_game`]), learns an input-space network
//! that reproduces the removal ([`preimage`]), and measures what is left
//! with kernel and MLP adversaries ([`adversaries`]) and association tests
//! ([`association`]). [`exactgame`] evaluates the same game exactly for small
//! problems and serves as a reference.

pub mod adversaries;
pub mod association;
pub mod container;
pub mod data;
pub mod error;
pub mod exactgame;
pub mod fantope_game;
pub mod kernels;
pub mod linalg;
pub mod nystrom;
pub mod preimage;

pub use error::{Error, Result};
pub use kernels::KernelSpec;
pub use nystrom::NystromMap;
