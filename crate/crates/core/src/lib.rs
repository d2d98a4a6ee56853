//! Skeleton-based action recognition with two-level domain-adversarial
//! feature alignment.
//!
//! Skeleton sequences are encoded as 3-channel images ([`encoder`]), fed to
//! a small convolutional feature extractor shared by source and target
//! data, and classified by a `2K`-neuron head whose halves act as source
//! and target task classifiers and, jointly, as a domain classifier
//! ([`model`]). Training alternates a head update and an extractor update
//! per step ([`trainer`]) using the loss terms in [`objectives`]. All
//! differentiation runs on the small tape engine in [`autograd`].

pub mod autograd;
pub mod benchmark;
pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
mod kernels;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod skeleton;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
