//! Weight and delay histograms.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::train::Network;

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`. Values
/// outside the range land in the end bins; a degenerate range puts
/// everything in the first bin.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins.max(1)];
    let n = counts.len();
    let width = (hi - lo) / n as f64;
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(n - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramTable {
    pub layer: usize,
    /// `weights` or `delays`.
    pub kind: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

fn range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

/// Latent weight and delay histograms of every layer, each over its own
/// value range.
pub fn export_histograms(net: &Network, bins: usize) -> Result<Vec<HistogramTable>> {
    if bins == 0 {
        return Err(Error::param("bins", "must be >= 1"));
    }
    let mut out = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let w: Vec<f64> = layer.weights.iter().copied().collect();
        let (lo, hi) = range(&w);
        out.push(HistogramTable {
            layer: l,
            kind: "weights",
            lo,
            hi,
            counts: histogram(&w, bins, lo, hi),
        });
        if let Some(d) = &layer.delays {
            let (lo, hi) = range(&d.values);
            out.push(HistogramTable {
                layer: l,
                kind: "delays",
                lo,
                hi,
                counts: histogram(&d.values, bins, lo, hi),
            });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct Row {
    layer: usize,
    kind: &'static str,
    bin: usize,
    lo: f64,
    hi: f64,
    count: usize,
}

/// One CSV row per bin.
pub fn write_histograms_csv(path: &Path, tables: &[HistogramTable]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in tables {
        let width = (t.hi - t.lo) / t.counts.len() as f64;
        for (bin, &count) in t.counts.iter().enumerate() {
            w.serialize(Row {
                layer: t.layer,
                kind: t.kind,
                bin,
                lo: t.lo + bin as f64 * width,
                hi: t.lo + (bin + 1) as f64 * width,
                count,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bin_holds_everything() {
        assert_eq!(histogram(&[0.1, 0.5, 0.99], 1, 0.0, 1.0), vec![3]);
        assert_eq!(histogram(&[2.0, 2.0], 4, 2.0, 2.0), vec![2, 0, 0, 0]);
    }

    #[test]
    fn edges_and_clamping() {
        assert_eq!(histogram(&[0.0, 1.0, 2.0, -5.0, 9.0], 2, 0.0, 2.0), vec![2, 3]);
    }

    #[test]
    fn counts_match_parameters() {
        let spec = NetworkSpec {
            n_inputs: 7,
            hidden: vec![5],
            n_classes: 3,
            n_steps: 20,
            ..NetworkSpec::default()
        };
        let net = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for bins in [1, 3, 10] {
            let tables = export_histograms(&net, bins).unwrap();
            assert_eq!(tables.len(), 3);
            assert_eq!(tables[0].counts.iter().sum::<usize>(), 35);
            assert_eq!(tables[1].counts.iter().sum::<usize>(), 5);
            assert_eq!(tables[2].counts.iter().sum::<usize>(), 15);
        }
        let one = export_histograms(&net, 1).unwrap();
        assert_eq!(one[1].counts, vec![5]);
        assert!(export_histograms(&net, 0).is_err());
    }
}
