//! Spiking neural networks whose synaptic plasticity rules are trained by
//! backpropagation through time.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration files
//! and the command-line front end live in the `diffplast` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod encoding;
pub mod envs;
pub mod error;
pub mod gradcheck;
pub mod math;
pub mod plasticity;
pub mod rng;
pub mod snn;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, SpikeMode, SurrogateParams, Tape, Var};
pub use error::{AutodiffError, Error, Result};
pub use plasticity::{PlasticityRuleParams, RuleKind};
pub use snn::{KernelBank, LayerParams, Network, NetworkConfig, NeuronParams};
pub use tensor::{Shape, Tensor};
