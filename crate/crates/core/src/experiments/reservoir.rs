//! Two-phase training: weights first with delays held at their initial
//! values, then delays alone on top of the frozen weights.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiments::record::RunRecord;
use crate::experiments::run::{init_network, train_run, RunOutcome};

#[derive(Debug, Clone)]
pub struct ReservoirOutcome {
    pub phase1: RunOutcome,
    pub phase2: RunOutcome,
    pub summary: ReservoirSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSummary {
    pub pretrain_epochs: usize,
    pub total_epochs: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// Every latent weight and scale is unchanged across phase 2.
    pub weights_frozen: bool,
}

pub fn reservoir_finetune(
    cfg: &RunConfig,
    data: &Dataset,
    pretrain_epochs: usize,
    total_epochs: usize,
    on_epoch: &mut dyn FnMut(&RunRecord),
) -> Result<ReservoirOutcome> {
    if pretrain_epochs > total_epochs {
        return Err(Error::param("pretrain_epochs", format!("{pretrain_epochs} exceeds total {total_epochs}")));
    }
    let mut c1 = cfg.clone();
    c1.training.epochs = pretrain_epochs;
    c1.training.freeze_delays = true;
    c1.training.freeze_weights = false;
    let net = init_network(cfg, &data.manifest)?;
    let phase1 = train_run(&c1, data, net, "phase1", on_epoch)?;

    let mut c2 = cfg.clone();
    c2.training.epochs = total_epochs - pretrain_epochs;
    c2.training.freeze_weights = true;
    c2.training.freeze_delays = false;
    let phase2 = train_run(&c2, data, phase1.net.clone(), "phase2", on_epoch)?;

    let weights_frozen = phase1
        .net
        .layers
        .iter()
        .zip(&phase2.net.layers)
        .all(|(a, b)| {
            a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                && a.quant.alpha.to_bits() == b.quant.alpha.to_bits()
                && a.quant.beta.to_bits() == b.quant.beta.to_bits()
        });
    let summary = ReservoirSummary {
        pretrain_epochs,
        total_epochs,
        accuracy_before: phase1.test_accuracy,
        accuracy_after: phase2.test_accuracy,
        weights_frozen,
    };
    Ok(ReservoirOutcome { phase1, phase2, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::run::load_run_data;

    fn cfg() -> RunConfig {
        let mut c = RunConfig::from_toml_str(
            "[data]\nsource = \"gen:interval:train=24,test=8,inputs=16,pool=4\"\nn_steps = 60\n[network]\nhidden = [8]\ndelay_init_max = 10.0\n",
        )
        .unwrap();
        c.training.batch_size = 8;
        c
    }

    #[test]
    fn phase_two_keeps_weights_and_moves_delays() {
        let c = cfg();
        let data = load_run_data(&c).unwrap();
        let out = reservoir_finetune(&c, &data, 1, 3, &mut |_| {}).unwrap();
        assert!(out.summary.weights_frozen);
        assert_eq!(out.phase1.records.len(), 1);
        assert_eq!(out.phase2.records.len(), 2);
        let init = init_network(&c, &data.manifest).unwrap();
        assert_eq!(init.layers[0].delays, out.phase1.net.layers[0].delays);
        assert_ne!(init.layers[0].weights, out.phase1.net.layers[0].weights);
    }

    #[test]
    fn full_pretraining_is_weights_only() {
        let c = cfg();
        let data = load_run_data(&c).unwrap();
        let out = reservoir_finetune(&c, &data, 2, 2, &mut |_| {}).unwrap();
        assert!(out.phase2.records.is_empty());
        assert_eq!(out.phase2.net, out.phase1.net);
        assert_eq!(out.summary.accuracy_before, out.summary.accuracy_after);
        assert!(reservoir_finetune(&c, &data, 3, 2, &mut |_| {}).is_err());
    }
}
