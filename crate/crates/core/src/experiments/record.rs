//! Per-epoch run records and their CSV form.
//!
//! Records hold only deterministic quantities so that a rerun with the same
//! config and seed reproduces `record.csv` byte for byte; wall time goes to
//! a separate timing file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiments::footprint::{memory_footprint, Footprint};
use crate::experiments::histogram::histogram;
use crate::train::{apply_regularization, Network, Prepared};

/// Delay statistics over the forward (lattice-quantized) delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub mean: f64,
    pub max: f64,
    /// Share of delays strictly above the long-delay threshold.
    pub long_fraction: f64,
    /// Distinct integer shifts, summed over layers.
    pub distinct: usize,
}

/// Forward delays of every hidden layer that has them, in layer order.
pub fn effective_delays(net: &Network) -> Result<Vec<Vec<f64>>> {
    Ok(Prepared::new(net)?
        .layers
        .into_iter()
        .filter_map(|pl| pl.effective_delays)
        .collect())
}

pub fn delay_stats(layers: &[Vec<f64>], long_threshold: f64) -> DelayStats {
    let all: Vec<f64> = layers.iter().flatten().copied().collect();
    if all.is_empty() {
        return DelayStats {
            mean: 0.0,
            max: 0.0,
            long_fraction: 0.0,
            distinct: 0,
        };
    }
    let distinct = layers
        .iter()
        .map(|l| {
            let mut s: Vec<i64> = l.iter().map(|d| d.round() as i64).collect();
            s.sort_unstable();
            s.dedup();
            s.len()
        })
        .sum();
    DelayStats {
        mean: all.iter().sum::<f64>() / all.len() as f64,
        max: all.iter().copied().fold(0.0, f64::max),
        long_fraction: all.iter().filter(|&&d| d > long_threshold).count() as f64 / all.len() as f64,
        distinct,
    }
}

/// One row of `record.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub penalty: f64,
    pub train_acc: f64,
    /// Present on evaluation epochs only.
    pub test_acc: Option<f64>,
    pub weight_bits: f64,
    pub sparse_weight_bits: f64,
    pub delay_bits: f64,
    pub total_bits: f64,
    pub f_d: f64,
    pub delay_mean: f64,
    pub delay_max: f64,
    pub long_delay_fraction: f64,
    pub distinct_delays: usize,
    /// `mean/max` per hidden layer, `;`-separated.
    pub layer_delays: String,
    /// Per-layer delay histograms over `[0, layer max]`, bins space-separated,
    /// layers `;`-separated.
    pub delay_hist: String,
}

/// Everything a record needs besides the network itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordContext<'a> {
    pub run_id: &'a str,
    pub config_hash: &'a str,
    pub seed: u64,
    pub hist_bins: usize,
    pub long_delay_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

impl RunRecord {
    pub fn build(net: &Network, ctx: &RecordContext<'_>, m: EpochMetrics) -> Result<Self> {
        let fp: Footprint = memory_footprint(net)?;
        let delays = effective_delays(net)?;
        let stats = delay_stats(&delays, ctx.long_delay_threshold);
        let layer_delays = delays
            .iter()
            .map(|l| {
                let s = delay_stats(std::slice::from_ref(l), ctx.long_delay_threshold);
                format!("{}/{}", s.mean, s.max)
            })
            .collect::<Vec<_>>()
            .join(";");
        let delay_hist = delays
            .iter()
            .map(|l| {
                let hi = l.iter().copied().fold(0.0, f64::max);
                let counts = histogram(l, ctx.hist_bins, 0.0, hi);
                counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
            })
            .collect::<Vec<_>>()
            .join(";");
        Ok(Self {
            run_id: ctx.run_id.to_string(),
            config_hash: ctx.config_hash.to_string(),
            seed: ctx.seed,
            epoch: m.epoch,
            loss: m.loss,
            penalty: apply_regularization(net).0,
            train_acc: m.train_acc,
            test_acc: m.test_acc,
            weight_bits: fp.weight_bits,
            sparse_weight_bits: fp.sparse_weight_bits,
            delay_bits: fp.delay_bits,
            total_bits: fp.total_bits,
            f_d: fp.f_d,
            delay_mean: stats.mean,
            delay_max: stats.max,
            long_delay_fraction: stats.long_fraction,
            distinct_delays: stats.distinct,
            layer_delays,
            delay_hist,
        })
    }
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run_id: String,
    pub epoch: usize,
    pub seconds: f64,
}

pub fn write_timing(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of the mean; the error is 0 for fewer than two values.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayLattice;
    use crate::train::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(lattice: Option<DelayLattice>) -> Network {
        let spec = NetworkSpec {
            n_inputs: 6,
            hidden: vec![5, 4],
            n_classes: 3,
            n_steps: 40,
            delay_init_max: 20.0,
            lattice,
            lambda: vec![0.1],
            ..NetworkSpec::default()
        };
        Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    fn ctx() -> RecordContext<'static> {
        RecordContext {
            run_id: "r0",
            config_hash: "abc",
            seed: 1,
            hist_bins: 4,
            long_delay_threshold: 10.0,
        }
    }

    #[test]
    fn record_invariants_and_csv_round_trip() {
        let m = EpochMetrics {
            epoch: 3,
            loss: 1.25,
            train_acc: 0.5,
            test_acc: None,
        };
        for lat in [None, Some(DelayLattice::new(0.0, 2.0, Some(6), false).unwrap())] {
            let n = net(lat);
            let r = RunRecord::build(&n, &ctx(), m).unwrap();
            assert_eq!(r.total_bits, r.weight_bits + r.delay_bits);
            assert!((0.0..=1.0).contains(&r.f_d));
            assert_eq!(r.penalty, apply_regularization(&n).0);
            assert!(r.distinct_delays <= 9);
            let hist_total: usize = r
                .delay_hist
                .split(';')
                .flat_map(|l| l.split(' '))
                .map(|c| c.parse::<usize>().unwrap())
                .sum();
            assert_eq!(hist_total, 9);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("record.csv");
            let rows = vec![r.clone(), RunRecord { test_acc: Some(0.75), ..r }];
            write_records(&p, &rows).unwrap();
            assert_eq!(read_records(&p).unwrap(), rows);
        }
    }

    #[test]
    fn lattice_caps_recorded_delays() {
        let lat = DelayLattice::new(0.0, 2.0, Some(3), false).unwrap();
        let r = RunRecord::build(&net(Some(lat)), &ctx(), EpochMetrics { epoch: 0, loss: 0.0, train_acc: 0.0, test_acc: None }).unwrap();
        assert!(r.delay_max <= 4.0);
        assert!(r.distinct_delays <= 6);
    }

    #[test]
    fn stats_of_known_delays() {
        let s = delay_stats(&[vec![0.0, 12.0, 4.0, 12.2]], 10.0);
        assert!((s.mean - 7.05).abs() < 1e-12);
        assert_eq!(s.max, 12.2);
        assert_eq!(s.long_fraction, 0.5);
        assert_eq!(s.distinct, 3);
        assert_eq!(delay_stats(&[], 10.0).mean, 0.0);
    }

    #[test]
    fn stderr() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, e) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((e - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
