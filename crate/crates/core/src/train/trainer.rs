use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::delay::project_delays;
use crate::error::{Error, Result};
use crate::quant::MIN_SCALE;
use crate::train::engine::{Gradients, Prepared};
use crate::train::loss::{count_windows, predict, spikemax_loss, CountMode, Surrogate};
use crate::train::network::{apply_regularization, Network};
use crate::train::optim::{build_optimizer, Optimizer};

/// Learning-rate multiplier over the epochs of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `0.5·(1 + cos(π·epoch/epochs))`, reaching 0 only after the last epoch.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Cosine if epochs == 0 => 1.0,
            Self::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_delays: f64,
    pub optimizer: String,
    pub lr_schedule: LrSchedule,
    /// Shuffle seed; a run config derives it from the run seed, so it is
    /// never read from or written to a config file.
    #[serde(skip)]
    pub seed: u64,
    pub surrogate: Surrogate,
    /// Spike-count window in steps; `None` counts over the whole sample.
    pub window: Option<usize>,
    pub count_mode: CountMode,
    /// Additive count smoothing inside the Spikemax probabilities.
    pub count_smoothing: f64,
    pub freeze_weights: bool,
    pub freeze_delays: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_weights: 1e-3,
            lr_delays: 0.1,
            optimizer: "adam".into(),
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            surrogate: Surrogate::default(),
            window: None,
            count_mode: CountMode::default(),
            count_smoothing: 1e-3,
            freeze_weights: false,
            freeze_delays: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if !(self.lr_weights > 0.0) || !(self.lr_delays > 0.0) {
            return Err(Error::param("lr", "learning rates must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if let Some(w) = self.window {
            if w == 0 || w > n_steps {
                return Err(Error::param("window", format!("must be in [1, {n_steps}], got {w}")));
            }
        }
        if !(self.surrogate.tau_theta > 0.0) || !(self.surrogate.tau_scale >= 0.0) {
            return Err(Error::param("surrogate", "tau_theta must be > 0 and tau_scale >= 0"));
        }
        if !(self.count_smoothing >= 0.0) {
            return Err(Error::param("count_smoothing", "must be >= 0"));
        }
        build_optimizer(&self.optimizer)?;
        Ok(())
    }

    pub fn window_len(&self, n_steps: usize) -> usize {
        self.window.unwrap_or(n_steps)
    }
}

/// Mutable training state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: Box<dyn Optimizer>,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub best_accuracy: f64,
    pub best: Option<Network>,
}

impl TrainState {
    pub fn new(cfg: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            optimizer: build_optimizer(&cfg.optimizer)?,
            epoch: 0,
            // the shuffling stream is decorrelated from the init stream
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed),
            best_accuracy: f64::NEG_INFINITY,
            best: None,
        })
    }

    /// Keeps a copy of `net` if `accuracy` beats the best so far.
    pub fn observe(&mut self, net: &Network, accuracy: f64) {
        if accuracy > self.best_accuracy {
            self.best_accuracy = accuracy;
            self.best = Some(net.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean Spikemax loss over the epoch's samples.
    pub loss: f64,
    /// Delay penalty after the last step.
    pub penalty: f64,
    /// Accuracy of the pre-update forward passes.
    pub train_accuracy: f64,
}

/// Loss, gradients and correctness for one sample.
pub fn sample_gradients(net: &Network, prepared: &Prepared, sample: &Sample, cfg: &TrainingConfig) -> Result<(f64, Gradients, bool)> {
    let trace = prepared.forward(&sample.raster)?;
    let readout = trace.readout();
    let window = cfg.window_len(readout.n_steps());
    let out = spikemax_loss(readout, sample.label, window, cfg.count_mode, cfg.count_smoothing)?;
    let (a, b) = *count_windows(readout.n_steps(), window, CountMode::Tiled).last().expect("one window");
    let correct = predict(&readout.counts_in(a, b)) == sample.label;
    let g = out.spike_gradient(readout.n_steps(), readout.n_neurons());
    let grads = prepared.backward(net, &trace, &g, cfg.surrogate)?;
    Ok((out.loss, grads, correct))
}

/// One descent step from already-reduced gradients with both learning
/// rates multiplied by `lr_scale`; projects delays and scales back into
/// their domains and snaps parameters to `f32`.
pub fn apply_step(net: &mut Network, state: &mut TrainState, grads: &Gradients, cfg: &TrainingConfig, lr_scale: f64) {
    let lr_w = cfg.lr_weights * lr_scale;
    let lr_d = cfg.lr_delays * lr_scale;
    for (l, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
        let slot = 8 * l;
        if !cfg.freeze_weights {
            let w = layer.weights.as_slice_mut().expect("standard layout");
            let gw = g.weights.as_standard_layout();
            state.optimizer.step(slot, w, gw.as_slice().expect("standard layout"), lr_w);
            if layer.quant.quantizer().is_ok_and(|q| q.learns_scales()) {
                let mut ab = [layer.quant.alpha, layer.quant.beta];
                state.optimizer.step(slot + 1, &mut ab, &[g.alpha, g.beta], lr_w);
                layer.quant.alpha = ab[0].max(MIN_SCALE);
                layer.quant.beta = ab[1].max(MIN_SCALE);
            }
        }
        if !cfg.freeze_delays {
            if let (Some(d), Some(gd)) = (&mut layer.delays, &g.delays) {
                state.optimizer.step(slot + 2, &mut d.values, gd, lr_d);
                *d = project_delays(d);
            }
            if let Some(lat) = &mut layer.lattice {
                if lat.learn_offset {
                    let mut off = [lat.offset];
                    state.optimizer.step(slot + 3, &mut off, &[g.offset], lr_d);
                    lat.offset = off[0].max(0.0);
                }
            }
        }
    }
    net.snap_to_f32();
}

/// One pass over `train` in shuffled minibatches. Per-sample gradients are
/// computed in parallel and reduced in sample order.
pub fn train_epoch(net: &mut Network, state: &mut TrainState, train: &[Sample], cfg: &TrainingConfig) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut state.rng);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let epoch = state.epoch;
    let lr_scale = cfg.lr_schedule.factor(epoch, cfg.epochs);
    for batch in order.chunks(cfg.batch_size) {
        let prepared = Prepared::new(net)?;
        let per_sample = batch
            .par_iter()
            .map(|&k| sample_gradients(net, &prepared, &train[k], cfg))
            .collect::<Vec<_>>();
        let mut total = Gradients::zeros_like(net);
        let mut batch_loss = 0.0;
        for r in per_sample {
            let (loss, g, ok) = r.map_err(|e| match e {
                Error::Numerical { reason, .. } => Error::Numerical { epoch, reason },
                other => other,
            })?;
            batch_loss += loss;
            correct += ok as usize;
            total.add_assign(&g);
        }
        total.scale(1.0 / batch.len() as f64);
        let (_, reg) = apply_regularization(net);
        for (g, r) in total.layers.iter_mut().zip(reg) {
            if let (Some(gd), Some(rd)) = (&mut g.delays, r) {
                gd.iter_mut().zip(rd).for_each(|(a, b)| *a += b);
            }
        }
        if !batch_loss.is_finite() || !total.is_finite() {
            return Err(Error::Numerical {
                epoch,
                reason: format!("non-finite loss or gradient (batch loss {batch_loss})"),
            });
        }
        loss_sum += batch_loss;
        apply_step(net, state, &total, cfg, lr_scale);
    }
    state.epoch += 1;
    Ok(EpochStats {
        epoch,
        loss: loss_sum / train.len() as f64,
        penalty: apply_regularization(net).0,
        train_accuracy: correct as f64 / train.len() as f64,
    })
}

/// Predicted class for every sample (argmax over the final count window,
/// lowest index on ties).
pub fn predictions(net: &Network, data: &[Sample], window: Option<usize>) -> Result<Vec<usize>> {
    let prepared = Prepared::new(net)?;
    data.par_iter()
        .map(|s| {
            let trace = prepared.forward(&s.raster)?;
            let readout = trace.readout();
            let w = window.unwrap_or(readout.n_steps());
            let (a, b) = *count_windows(readout.n_steps(), w, CountMode::Tiled).last().expect("one window");
            Ok(predict(&readout.counts_in(a, b)))
        })
        .collect()
}

/// Fraction of samples classified correctly.
pub fn evaluate(net: &Network, data: &[Sample], window: Option<usize>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let preds = predictions(net, data, window)?;
    let correct = preds.iter().zip(data).filter(|(p, s)| **p == s.label).count();
    Ok(correct as f64 / data.len() as f64)
}
