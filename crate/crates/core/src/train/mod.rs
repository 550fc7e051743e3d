//! Training stack: network model, Spikemax loss, BPTT, optimizers and checkpoints.

pub mod checkpoint;
pub mod engine;
pub mod loss;
pub mod network;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, WeightForm};
pub use engine::{backward_pass, forward_pass, frozen_network, Gradients, LayerGrads, Prepared, Trace};
pub use loss::{predict, spikemax_from_counts, spikemax_loss, surrogate_spike_grad, CountMode, Surrogate};
pub use network::{apply_regularization, Layer, Network, NetworkSpec, NeuronConfig};
pub use trainer::{evaluate, predictions, train_epoch, EpochStats, LrSchedule, TrainState, TrainingConfig};
