//! Spiking neural networks with learnable per-neuron axonal delays and
//! low-bit synaptic weights: simulation, training, and the experiment
//! harness around them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod delay;
pub mod error;
pub mod experiments;
pub mod quant;
pub mod spike;
pub mod train;

pub use error::{Error, Result};
