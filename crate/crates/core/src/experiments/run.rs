//! Single training runs: data, initialization, the epoch loop and artifacts.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{load_dataset, Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::experiments::histogram::{export_histograms, write_histograms_csv};
use crate::experiments::record::{write_records, write_timing, EpochMetrics, RecordContext, RunRecord, TimingRow};
use crate::train::{evaluate, save_checkpoint, train_epoch, Network, TrainState, WeightForm};

pub fn load_run_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = load_dataset(&cfg.data.data_source()?, cfg.data.step_ms, cfg.data.n_steps, cfg.seeds().data)?;
    if ds.train.is_empty() || ds.test.is_empty() {
        return Err(Error::Input(format!("{}: empty train or test split", ds.manifest.source)));
    }
    Ok(ds)
}

pub fn init_network(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Network> {
    let spec = cfg.network_spec(manifest)?;
    Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.seeds().init))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub net: Network,
    pub records: Vec<RunRecord>,
    pub timing: Vec<TimingRow>,
    /// Test accuracy of the final network.
    pub test_accuracy: f64,
}

/// Trains `net` for `cfg.training.epochs` epochs. The test split is scored
/// every `eval.eval_every` epochs and always after the last one.
pub fn train_run(
    cfg: &RunConfig,
    data: &Dataset,
    mut net: Network,
    run_id: &str,
    on_epoch: &mut dyn FnMut(&RunRecord),
) -> Result<RunOutcome> {
    let tcfg = cfg.training_config();
    tcfg.validate(net.n_steps)?;
    let hash = cfg.hash();
    let ctx = RecordContext {
        run_id,
        config_hash: &hash,
        seed: cfg.seed,
        hist_bins: cfg.eval.hist_bins,
        long_delay_threshold: cfg.eval.long_delay_threshold,
    };
    let mut state = TrainState::new(&tcfg)?;
    let mut records = Vec::with_capacity(tcfg.epochs);
    let mut timing = Vec::with_capacity(tcfg.epochs);
    let mut test_accuracy = None;
    for e in 0..tcfg.epochs {
        let start = Instant::now();
        let stats = train_epoch(&mut net, &mut state, &data.train, &tcfg)?;
        let last = e + 1 == tcfg.epochs;
        let due = cfg.eval.eval_every > 0 && (e + 1) % cfg.eval.eval_every == 0;
        let test_acc = if last || due {
            Some(evaluate(&net, &data.test, tcfg.window)?)
        } else {
            None
        };
        if last {
            test_accuracy = test_acc;
        }
        let record = RunRecord::build(
            &net,
            &ctx,
            EpochMetrics {
                epoch: stats.epoch,
                loss: stats.loss,
                train_acc: stats.train_accuracy,
                test_acc,
            },
        )?;
        on_epoch(&record);
        records.push(record);
        timing.push(TimingRow {
            run_id: run_id.to_string(),
            epoch: stats.epoch,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let test_accuracy = match test_accuracy {
        Some(a) => a,
        None => evaluate(&net, &data.test, tcfg.window)?,
    };
    Ok(RunOutcome {
        net,
        records,
        timing,
        test_accuracy,
    })
}

/// Loads data, initializes from the config seed and trains.
pub fn run_from_config(cfg: &RunConfig, run_id: &str, on_epoch: &mut dyn FnMut(&RunRecord)) -> Result<(Dataset, RunOutcome)> {
    cfg.validate()?;
    let data = load_run_data(cfg)?;
    let net = init_network(cfg, &data.manifest)?;
    let out = train_run(cfg, &data, net, run_id, on_epoch)?;
    Ok((data, out))
}

/// Writes `checkpoint.bin`, `record.csv`, `timing.csv`, `histograms.csv`
/// and `config.snapshot` into `dir`.
pub fn write_run_artifacts(dir: &Path, cfg: &RunConfig, out: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    cfg.save(&dir.join("config.snapshot"))?;
    save_checkpoint(&dir.join("checkpoint.bin"), &out.net, WeightForm::Latent)?;
    write_records(&dir.join("record.csv"), &out.records)?;
    write_timing(&dir.join("timing.csv"), &out.timing)?;
    write_histograms_csv(&dir.join("histograms.csv"), &export_histograms(&out.net, cfg.eval.hist_bins)?)?;
    Ok(())
}
