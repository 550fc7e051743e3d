//! Parameter memory accounting.
//!
//! Weights cost `effective_bits` each (`log2 3` for ternary, `m` for m-bit,
//! 32 for full precision). A delay costs `ceil(log2 levels)` stored bits on a
//! finite lattice and 32 bits when continuous. The readout carries no delays.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::train::{Network, Prepared};

/// Bits per continuous (unquantized) delay.
pub const FULL_PRECISION_DELAY_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub weight_bits: f64,
    /// Weight bits counting only nonzero quantized weights.
    pub sparse_weight_bits: f64,
    /// Stored delay bits (`ceil(log2 levels)` per delay).
    pub delay_bits: f64,
    /// Information content of the delays (`log2 levels` per delay).
    pub delay_info_bits: f64,
    /// `weight_bits + delay_bits`.
    pub total_bits: f64,
    /// Delay share of the dense total.
    pub f_d: f64,
}

impl Footprint {
    fn from_parts(weight_bits: f64, sparse_weight_bits: f64, delay_bits: f64, delay_info_bits: f64) -> Self {
        let total_bits = weight_bits + delay_bits;
        Self {
            weight_bits,
            sparse_weight_bits,
            delay_bits,
            delay_info_bits,
            total_bits,
            f_d: delay_fraction(weight_bits, delay_bits),
        }
    }

    pub fn total_mbit(&self) -> f64 {
        self.total_bits / 1e6
    }
}

/// `f_d = delay_bits / (weight_bits + delay_bits)`, 0 for an empty budget.
pub fn delay_fraction(weight_bits: f64, delay_bits: f64) -> f64 {
    let total = weight_bits + delay_bits;
    if total > 0.0 {
        delay_bits / total
    } else {
        0.0
    }
}

/// Footprint of a trained network; sparsity is measured on the quantized
/// weights the forward pass uses.
pub fn memory_footprint(net: &Network) -> Result<Footprint> {
    let prepared = Prepared::new(net)?;
    let mut weight_bits = 0.0;
    let mut sparse = 0.0;
    let mut delay_bits = 0.0;
    let mut delay_info = 0.0;
    for (layer, pl) in net.layers.iter().zip(&prepared.layers) {
        let bits = layer.quant.effective_bits()?;
        weight_bits += layer.weights.len() as f64 * bits;
        sparse += pl.weights.iter().filter(|w| **w != 0.0).count() as f64 * bits;
        if let Some(d) = &layer.delays {
            let (stored, info) = match layer.lattice.as_ref().and_then(|l| l.n_levels) {
                Some(levels) => ((levels as f64).log2().ceil(), (levels as f64).log2()),
                None => (FULL_PRECISION_DELAY_BITS as f64, FULL_PRECISION_DELAY_BITS as f64),
            };
            delay_bits += d.len() as f64 * stored;
            delay_info += d.len() as f64 * info;
        }
    }
    Ok(Footprint::from_parts(weight_bits, sparse, delay_bits, delay_info))
}

/// Dense footprint of a feedforward architecture `sizes = [in, h1, .., out]`
/// with delays on every hidden layer when `delay_levels` is given
/// (`Some(None)` meaning continuous delays).
pub fn architecture_footprint(sizes: &[usize], weight_bits: f64, delay_levels: Option<Option<u32>>) -> Footprint {
    let n_hidden: usize = sizes.iter().skip(1).take(sizes.len().saturating_sub(2)).sum();
    let (stored, info) = match delay_levels {
        None => (0.0, 0.0),
        Some(None) => (FULL_PRECISION_DELAY_BITS as f64, FULL_PRECISION_DELAY_BITS as f64),
        Some(Some(levels)) => ((levels as f64).log2().ceil(), (levels as f64).log2()),
    };
    // summed per layer, in the same order as `memory_footprint`
    let wb = sizes.windows(2).map(|w| (w[0] * w[1]) as f64 * weight_bits).sum();
    Footprint::from_parts(wb, wb, n_hidden as f64 * stored, n_hidden as f64 * info)
}
