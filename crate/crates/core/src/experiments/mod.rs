//! Experiment harness: runs, records, footprints, ablations and sweeps.

pub mod ablation;
pub mod footprint;
pub mod histogram;
pub mod record;
pub mod reservoir;
pub mod run;
pub mod sweep;

pub use ablation::{ablate_delays, fraction_at_loss, prune_by_delay, pruning_curve, DelaySelection, PruneOrder, PrunePoint};
pub use footprint::{architecture_footprint, delay_fraction, memory_footprint, Footprint};
pub use histogram::{export_histograms, write_histograms_csv, HistogramTable};
pub use record::{mean_stderr, read_records, write_records, RunRecord};
pub use reservoir::{reservoir_finetune, ReservoirOutcome, ReservoirSummary};
pub use run::{init_network, load_run_data, run_from_config, train_run, write_run_artifacts, RunOutcome};
pub use sweep::{run_sweep, GridRow, GridSpec, SweepGrid, SweepKind, SweepOptions};
