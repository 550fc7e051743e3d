use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use delaysnn::config::{DelayQuantConfig, RunConfig};
use delaysnn::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "delaysnn", version, about = "Spiking networks with learnable axonal delays and low-bit weights")]
pub struct Cli {
    /// Log filter, e.g. `info` or `delaysnn=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write its artifacts.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a grid sweep (bits, tau, lambda or width).
    Sweep(SweepArgs),
    /// Delay-ordered pruning curves and delay ablations of a checkpoint.
    Ablate(AblateArgs),
    /// Write a dataset as event files.
    Gendata(GendataArgs),
    /// Print the parameter memory of a checkpoint or an architecture.
    Footprint(FootprintArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

/// Flags shared by every config-driven command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Event file path or `gen:<task>[:k=v,...]`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long, value_enum)]
    pub delays: Option<OnOff>,
    #[arg(long)]
    pub freeze_weights: bool,
    #[arg(long)]
    pub freeze_delays: bool,
    /// `full`, `m<bits>`, `ternary` or `ternary-learn`.
    #[arg(long)]
    pub wq: Option<String>,
    /// Delay lattice `<levels>,<step>,<offset|learn>`, or `none`.
    #[arg(long)]
    pub dq: Option<String>,
    #[arg(long)]
    pub tau_s: Option<f64>,
    #[arg(long)]
    pub tau_r: Option<f64>,
    /// Delay L2 coefficients as `<layer>=<value>,...` or one broadcast value.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hidden widths, comma-separated.
    #[arg(long)]
    pub hidden: Option<String>,
}

impl Common {
    /// Defaults, then the config file (or `fallback` when none is given), then flags.
    pub fn resolve(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match self.config.as_deref().or(fallback) {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.data {
            cfg.data.source = d.clone();
        }
        if let Some(d) = self.delays {
            cfg.network.delays = d == OnOff::On;
        }
        cfg.training.freeze_weights |= self.freeze_weights;
        cfg.training.freeze_delays |= self.freeze_delays;
        if let Some(w) = &self.wq {
            cfg.network.weight_quant = w.clone();
        }
        if let Some(d) = &self.dq {
            cfg.network.delay_quant = match d.as_str() {
                "none" | "full" => None,
                s => Some(DelayQuantConfig::parse(s)?),
            };
        }
        if let Some(t) = self.tau_s {
            cfg.network.tau_s = t;
        }
        if let Some(t) = self.tau_r {
            cfg.network.tau_r = t;
        }
        if let Some(h) = &self.hidden {
            cfg.network.hidden = parse_list(h, "hidden")?;
        }
        if let Some(l) = &self.lambda {
            cfg.network.lambda = parse_lambda(l, &cfg.network.lambda, cfg.network.hidden.len())?;
        }
        if let Some(e) = self.epochs {
            cfg.training.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("{what}: `{v}` is not valid"))))
        .collect()
}

/// `0.1` broadcasts; `0=0.1,1=0.2` sets hidden layers by index, the rest
/// keep their current value.
pub fn parse_lambda(s: &str, current: &[f64], n_hidden: usize) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Config(format!("--lambda `{s}`: {m}"));
    if !s.contains('=') {
        let v: f64 = s.trim().parse().map_err(|_| bad("expected a number or <layer>=<value>,..."))?;
        return Ok(vec![v]);
    }
    let mut out: Vec<f64> = (0..n_hidden)
        .map(|l| match current.len() {
            0 => 0.0,
            1 => current[0],
            _ => current.get(l).copied().unwrap_or(0.0),
        })
        .collect();
    for part in s.split(',') {
        let (l, v) = part.split_once('=').ok_or_else(|| bad("expected <layer>=<value>"))?;
        let l: usize = l.trim().parse().map_err(|_| bad("layer is not an index"))?;
        let v: f64 = v.trim().parse().map_err(|_| bad("value is not a number"))?;
        *out.get_mut(l).ok_or_else(|| bad(&format!("layer {l} >= {n_hidden} hidden layers")))? = v;
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also print the bit accounting.
    #[arg(long)]
    pub footprint: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep kind.
    pub kind: String,
    /// Axis values as `<name>=<v1>;<v2>;...`; repeatable.
    #[arg(long = "axis", required = true)]
    pub axes: Vec<String>,
    /// Quantize shared full-precision checkpoints instead of retraining (bits only).
    #[arg(long)]
    pub posthoc: bool,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pruned fractions, comma-separated.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub fractions: String,
    /// Delay ablations: `all`, `longest:<k>`, `shortest:<k>` or `<layer>:<neuron>`; repeatable.
    #[arg(long = "zero")]
    pub zero: Vec<String>,
    #[arg(long, default_value = "runs/ablate")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory for `train.evt`, `test.evt` and `config.snapshot`.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FootprintArgs {
    #[arg(long, conflicts_with = "arch")]
    pub checkpoint: Option<PathBuf>,
    /// Layer sizes `in,h1,...,out`.
    #[arg(long)]
    pub arch: Option<String>,
    /// Weight scheme for `--arch`.
    #[arg(long, default_value = "ternary")]
    pub wq: String,
    /// Delay levels for `--arch`: a count, `full` for continuous, or `none`.
    #[arg(long, default_value = "none")]
    pub dq: String,
}
