//! Spike-driven approximation kernels built on multi-basis exponential-decay
//! (MBE) neurons.
//!
//! The crate covers the full path from neuron dynamics to a converted
//! transformer block:
//!
//! - [`neuron`]: exact FS/MBE spike dynamics over discrete timesteps
//! - [`fit`]: gradient-descent fitting of neuron parameters to scalar targets
//! - [`arith`]: identity spike encoders and spike-driven multiplication
//! - [`ops`]: spiking GELU/Tanh, exp, reciprocal, inverse sqrt, softmax, layernorm
//! - [`convert`]: reference float transformer, calibration, conversion, fidelity
//! - [`metrics`]: energy estimates, firing rates, approximation-bound terms
//! - [`store`]: versioned JSON documents for fitted parameters and reports

pub mod arith;
pub mod convert;
pub mod error;
pub mod fit;
pub mod metrics;
pub mod neuron;
pub mod ops;
pub mod store;

pub use error::{Error, Result};
