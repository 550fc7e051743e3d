//! Delay-ordered pruning and delay ablation.
//!
//! Both operate on the frozen network (quantized weights stored as plain
//! values, lattice delays resolved), because some quantizers map a latent
//! zero to a nonzero level and could not express a removed connection.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::train::{evaluate, frozen_network, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneOrder {
    ShortFirst,
    LongFirst,
}

impl std::str::FromStr for PruneOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short_first" | "short" => Ok(Self::ShortFirst),
            "long_first" | "long" => Ok(Self::LongFirst),
            _ => Err(Error::Config(format!("unknown prune order `{s}` (short_first, long_first)"))),
        }
    }
}

impl std::fmt::Display for PruneOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ShortFirst => "short_first",
            Self::LongFirst => "long_first",
        })
    }
}

/// Hidden neurons `(layer, index)` that carry delays, sorted by delay in
/// the given order; ties break by position so the ranking is total.
pub fn rank_by_delay(net: &Network, order: PruneOrder) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, usize, usize)> = net
        .layers
        .iter()
        .enumerate()
        .filter_map(|(l, layer)| layer.delays.as_ref().map(|d| (l, d)))
        .flat_map(|(l, d)| d.values.iter().enumerate().map(move |(i, &v)| (v, l, i)))
        .collect();
    all.sort_by(|a, b| {
        let by_delay = match order {
            PruneOrder::ShortFirst => a.0.total_cmp(&b.0),
            PruneOrder::LongFirst => b.0.total_cmp(&a.0),
        };
        by_delay.then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    all.into_iter().map(|(_, l, i)| (l, i)).collect()
}

/// Removes `round(fraction·N)` delayed hidden neurons in the given order by
/// zeroing their outgoing weights.
pub fn prune_by_delay(net: &Network, fraction: f64, order: PruneOrder) -> Result<Network> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::param("fraction", format!("must be in [0, 1], got {fraction}")));
    }
    let mut out = frozen_network(net)?;
    let ranked = rank_by_delay(&out, order);
    let k = (fraction * ranked.len() as f64).round() as usize;
    for &(l, i) in &ranked[..k] {
        out.layers[l + 1].weights.column_mut(i).fill(0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DelaySelection {
    All,
    /// Explicit `(layer, neuron)` pairs.
    Neurons(Vec<(usize, usize)>),
    Longest(usize),
    Shortest(usize),
}

/// Sets the selected delays to zero and keeps every weight.
pub fn ablate_delays(net: &Network, selection: &DelaySelection) -> Result<Network> {
    let mut out = frozen_network(net)?;
    let targets = match selection {
        DelaySelection::All => rank_by_delay(&out, PruneOrder::ShortFirst),
        DelaySelection::Neurons(v) => {
            for &(l, i) in v {
                let ok = out
                    .layers
                    .get(l)
                    .and_then(|layer| layer.delays.as_ref())
                    .is_some_and(|d| i < d.len());
                if !ok {
                    return Err(Error::Input(format!("layer {l} neuron {i} has no delay")));
                }
            }
            v.clone()
        }
        DelaySelection::Longest(k) => rank_by_delay(&out, PruneOrder::LongFirst).into_iter().take(*k).collect(),
        DelaySelection::Shortest(k) => rank_by_delay(&out, PruneOrder::ShortFirst).into_iter().take(*k).collect(),
    };
    for (l, i) in targets {
        if let Some(d) = &mut out.layers[l].delays {
            d.values[i] = 0.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePoint {
    pub order: PruneOrder,
    pub fraction: f64,
    pub accuracy: f64,
    /// `(base - accuracy) / base`.
    pub relative_loss: f64,
}

pub fn pruning_curve(net: &Network, data: &[Sample], fractions: &[f64], order: PruneOrder, window: Option<usize>) -> Result<Vec<PrunePoint>> {
    let base = evaluate(net, data, window)?;
    fractions
        .iter()
        .map(|&f| {
            let accuracy = evaluate(&prune_by_delay(net, f, order)?, data, window)?;
            Ok(PrunePoint {
                order,
                fraction: f,
                accuracy,
                relative_loss: if base > 0.0 { (base - accuracy) / base } else { 0.0 },
            })
        })
        .collect()
}

/// Smallest fraction on the curve whose relative loss reaches `level`.
pub fn fraction_at_loss(curve: &[PrunePoint], level: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.relative_loss >= level)
        .map(|p| p.fraction)
        .min_by(f64::total_cmp)
}
