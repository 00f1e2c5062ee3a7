//! Exact enumeration, block-separation constructions and Monte Carlo
//! experiments for Ising perceptrons with `{0,1}`-valued activations.
//!
//! The crate is organised bottom-up:
//!
//! * [`formulas`]: closed-form entropy functions and tail bounds.
//! * [`disorder`]: seed-reproducible samplers for the constraint vectors.
//! * [`activation`]: activation functions `U` and their soft truncations.
//! * [`partition`]: Gray-code enumeration of partition functions over `{-1,+1}^N`.
//! * [`separation`]: block decompositions and certified separated families.
//! * [`verify`]: frequency checks of the probabilistic bounds.
//! * [`experiments`]: threshold, concentration and universality scans.
//! * [`cli`]: configuration, manifests and CSV/JSON emission for the `plab` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod cli;
pub mod disorder;
pub mod error;
pub mod experiments;
pub mod formulas;
pub mod partition;
pub mod separation;
pub mod stats;
pub mod stream;
pub mod verify;

pub use activation::{Activation, SoftActivation};
pub use disorder::{DisorderMatrix, DisorderSpec, Family};
pub use error::{LabError, Result};
pub use partition::{Config, Enumerator, Instance, PartitionResult};
pub use separation::{BlockDecomposition, SeparatedFamily};
pub use stream::SeededStream;
