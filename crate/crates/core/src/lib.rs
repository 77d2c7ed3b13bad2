//! Workbench for training-time neuron alignment.
//!
//! The crate is organised around a flat parameter vector ([`nn::ParamVector`]) that
//! every other piece operates on:
//!
//! - [`nn`]: dense ReLU networks, backpropagation, masked SGD, evaluation and training.
//! - [`mask`]: gradient masks (partially fixed neurons) and pruning at initialization.
//! - [`connect`]: linear interpolation, loss/accuracy barriers, fusion and landscape slices.
//! - [`perm`]: neuron permutations, linear assignment, weight matching and annealing.
//! - [`theory`]: Monte Carlo checker for the two-layer interpolation bounds.
//! - [`fed`]: single-process federated simulator (FedAvg, FedPFN, FedPNU).
//! - [`data`]: IDX / CIFAR-10 parsers, synthetic generators and normalization.
//! - [`lmc`]: end-to-end replica training recipe shared by the CLI and tests.
//! - [`checkpoint`]: binary model checkpoints.

pub mod checkpoint;
pub mod connect;
pub mod data;
mod error;
pub mod fed;
pub mod lmc;
pub mod mask;
pub mod nn;
pub mod perm;
mod real;
pub mod seed;
pub mod theory;

pub use error::{Error, ErrorClass, Result};
pub use real::Real;
