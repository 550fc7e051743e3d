//! Grid sweeps over configuration axes.
//!
//! A sweep kind names its axes and knows how to apply one axis value to a
//! config; kinds are looked up by name in a registry. Every cell runs
//! `sweep.n_seeds` seeds (`seed`, `seed + 1`, ...) and lands in
//! `<out>/<sweep>/<cell>/` with `record.csv`, `timing.csv`, per-seed
//! histograms, `config.snapshot` and a `result.json` used for resuming.
//! The summary `grid.csv` has one row per cell and a fixed column set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DelayQuantConfig, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::histogram::{export_histograms, write_histograms_csv};
use crate::experiments::record::{mean_stderr, write_records, write_timing, EpochMetrics, RecordContext, RunRecord, TimingRow};
use crate::experiments::run::{init_network, load_run_data, train_run};
use crate::quant::QuantSpec;
use crate::train::{evaluate, load_checkpoint, save_checkpoint, Network, WeightForm};

/// Axis values keyed by axis name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridSpec {
    pub axes: BTreeMap<String, Vec<String>>,
}

impl GridSpec {
    /// Adds `name=v1;v2;...`.
    pub fn add_axis(&mut self, spec: &str) -> Result<()> {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("axis `{spec}`: expected <name>=<v1;v2;...>")))?;
        let values: Vec<String> = values.split(';').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Config(format!("axis `{name}` has no values")));
        }
        self.axes.insert(name.trim().to_string(), values);
        Ok(())
    }

    pub fn parse(specs: &[String]) -> Result<Self> {
        let mut g = Self::default();
        for s in specs {
            g.add_axis(s)?;
        }
        Ok(g)
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: String,
    pub coords: Vec<(String, String)>,
    pub config: RunConfig,
}

pub trait SweepKind: Send + Sync {
    fn name(&self) -> &'static str;

    fn axes(&self) -> &'static [&'static str];

    fn apply(&self, cfg: &mut RunConfig, axis: &str, value: &str) -> Result<()>;

    fn supports_posthoc(&self) -> bool {
        false
    }

    /// Cartesian product of the axes in declaration order.
    fn cells(&self, base: &RunConfig, grid: &GridSpec) -> Result<Vec<Cell>> {
        for name in grid.axes.keys() {
            if !self.axes().contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "sweep `{}` has no axis `{name}` (axes: {})",
                    self.name(),
                    self.axes().join(", ")
                )));
            }
        }
        let mut cells = vec![(Vec::new(), base.clone())];
        for &axis in self.axes() {
            let values = grid
                .axes
                .get(axis)
                .ok_or_else(|| Error::Config(format!("sweep `{}` needs axis `{axis}`", self.name())))?;
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for (coords, cfg) in &cells {
                for v in values {
                    let mut c = cfg.clone();
                    self.apply(&mut c, axis, v)?;
                    let mut k: Vec<(String, String)> = coords.clone();
                    k.push((axis.to_string(), v.clone()));
                    next.push((k, c));
                }
            }
            cells = next;
        }
        let out: Vec<Cell> = cells
            .into_iter()
            .map(|(coords, config)| Cell {
                key: cell_key(&coords),
                coords,
                config,
            })
            .collect();
        for (i, c) in out.iter().enumerate() {
            if out[..i].iter().any(|o| o.key == c.key) {
                return Err(Error::Config(format!("duplicate cell `{}`", c.key)));
            }
            c.config.validate()?;
        }
        Ok(out)
    }
}

/// Filesystem-safe key such as `wq=ternary__dq=8-1-0`.
pub fn cell_key(coords: &[(String, String)]) -> String {
    coords
        .iter()
        .map(|(a, v)| {
            let v: String = v
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '-' })
                .collect();
            format!("{a}={v}")
        })
        .collect::<Vec<_>>()
        .join("__")
}

fn parse_f64(axis: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("axis `{axis}`: `{v}` is not a number")))
}

/// Weight quantizer × delay lattice.
pub struct BitsSweep;

impl SweepKind for BitsSweep {
    fn name(&self) -> &'static str {
        "bits"
    }

    fn axes(&self) -> &'static [&'static str] {
        &["wq", "dq"]
    }

    fn apply(&self, cfg: &mut RunConfig, axis: &str, value: &str) -> Result<()> {
        match axis {
            "wq" => {
                QuantSpec::parse(value)?;
                cfg.network.weight_quant = value.to_string();
            }
            _ => {
                cfg.network.delay_quant = match value {
                    "none" | "full" => None,
                    v => Some(DelayQuantConfig::parse(v)?),
                };
            }
        }
        Ok(())
    }

    fn supports_posthoc(&self) -> bool {
        true
    }
}

/// Both kernel time constants set to the same value.
pub struct TauSweep;

impl SweepKind for TauSweep {
    fn name(&self) -> &'static str {
        "tau"
    }

    fn axes(&self) -> &'static [&'static str] {
        &["tau"]
    }

    fn apply(&self, cfg: &mut RunConfig, axis: &str, value: &str) -> Result<()> {
        let t = parse_f64(axis, value)?;
        if !(t > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {t}")));
        }
        cfg.network.tau_s = t;
        cfg.network.tau_r = t;
        Ok(())
    }
}

/// Delay L2 coefficient broadcast to every hidden layer.
pub struct LambdaSweep;

impl SweepKind for LambdaSweep {
    fn name(&self) -> &'static str {
        "lambda"
    }

    fn axes(&self) -> &'static [&'static str] {
        &["lambda"]
    }

    fn apply(&self, cfg: &mut RunConfig, axis: &str, value: &str) -> Result<()> {
        let l = parse_f64(axis, value)?;
        if !(l >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
        }
        cfg.network.lambda = vec![l];
        Ok(())
    }
}

/// Every hidden layer set to the same width.
pub struct WidthSweep;

impl SweepKind for WidthSweep {
    fn name(&self) -> &'static str {
        "width"
    }

    fn axes(&self) -> &'static [&'static str] {
        &["width"]
    }

    fn apply(&self, cfg: &mut RunConfig, axis: &str, value: &str) -> Result<()> {
        let w: usize = value
            .parse()
            .map_err(|_| Error::Config(format!("axis `{axis}`: `{value}` is not a width")))?;
        if w == 0 {
            return Err(Error::Config("width must be >= 1".into()));
        }
        let n = cfg.network.hidden.len().max(1);
        cfg.network.hidden = vec![w; n];
        Ok(())
    }
}

type Factory = fn() -> Box<dyn SweepKind>;

pub struct SweepRegistry {
    entries: BTreeMap<&'static str, Factory>,
}

impl SweepRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("bits", || Box::new(BitsSweep));
        r.register("tau", || Box::new(TauSweep));
        r.register("lambda", || Box::new(LambdaSweep));
        r.register("width", || Box::new(WidthSweep));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn SweepKind>> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| {
            Error::Config(format!(
                "unknown sweep `{name}` (known: {})",
                self.entries.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

pub fn registry() -> &'static SweepRegistry {
    static REGISTRY: OnceLock<SweepRegistry> = OnceLock::new();
    REGISTRY.get_or_init(SweepRegistry::with_builtins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Completed,
    Failed,
}

/// One `grid.csv` row. Metric columns are empty for failed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub sweep: String,
    pub cell: String,
    /// `retrain` or `posthoc`.
    pub mode: String,
    pub wq: String,
    pub dq: String,
    pub tau_s: f64,
    pub tau_r: f64,
    pub lambda: String,
    pub hidden: String,
    pub status: CellStatus,
    pub n_seeds: usize,
    pub test_acc_mean: Option<f64>,
    pub test_acc_stderr: Option<f64>,
    pub train_acc_mean: Option<f64>,
    pub weight_bits: Option<f64>,
    pub delay_bits: Option<f64>,
    pub total_bits: Option<f64>,
    pub f_d: Option<f64>,
    pub delay_mean: Option<f64>,
    pub delay_mean_stderr: Option<f64>,
    pub long_delay_fraction: Option<f64>,
    pub distinct_delays_mean: Option<f64>,
    pub config_hash: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub name: String,
    pub rows: Vec<GridRow>,
}

impl SweepGrid {
    pub fn row(&self, cell: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.cell == cell)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    /// Quantize shared full-precision checkpoints instead of retraining.
    pub posthoc: bool,
}

/// Result of one seed of one cell.
struct SeedRun {
    records: Vec<RunRecord>,
    timing: Vec<TimingRow>,
    net: Network,
    test_accuracy: f64,
    train_accuracy: f64,
}

fn seed_config(cell: &RunConfig, s: usize) -> RunConfig {
    let mut c = cell.clone();
    c.seed = cell.seed.wrapping_add(s as u64);
    c
}

pub fn run_id(seed: u64) -> String {
    format!("seed{seed}")
}

fn retrain(cfg: &RunConfig) -> Result<SeedRun> {
    let data = load_run_data(cfg)?;
    let net = init_network(cfg, &data.manifest)?;
    let out = train_run(cfg, &data, net, &run_id(cfg.seed), &mut |_| {})?;
    let train_accuracy = out.records.last().map_or(0.0, |r| r.train_acc);
    Ok(SeedRun {
        records: out.records,
        timing: out.timing,
        net: out.net,
        test_accuracy: out.test_accuracy,
        train_accuracy,
    })
}

/// Full-precision model with continuous delays shared by every post-hoc cell.
fn posthoc_base_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.network.weight_quant = "full".into();
    c.network.delay_quant = None;
    c
}

fn load_or_train_base(dir: &Path, cfg: &RunConfig) -> Result<(Network, f64)> {
    let hash = cfg.hash();
    let ck = dir.join("checkpoint.bin");
    let marker = dir.join("hash");
    if fs::read_to_string(&marker).is_ok_and(|h| h == hash) {
        if let Ok(net) = load_checkpoint(&ck) {
            let loss = crate::experiments::record::read_records(&dir.join("record.csv"))?
                .last()
                .map_or(0.0, |r| r.loss);
            return Ok((net, loss));
        }
    }
    let run = retrain(cfg)?;
    fs::create_dir_all(dir)?;
    save_checkpoint(&ck, &run.net, WeightForm::Latent)?;
    write_records(&dir.join("record.csv"), &run.records)?;
    cfg.save(&dir.join("config.snapshot"))?;
    fs::write(&marker, &hash)?;
    Ok((run.net, run.records.last().map_or(0.0, |r| r.loss)))
}

/// Swaps in the cell's weight quantizer (scales re-initialized from the
/// latent weights) and delay lattice.
pub fn requantize(net: &Network, cfg: &RunConfig) -> Result<Network> {
    let mut out = net.clone();
    let lattice = match &cfg.network.delay_quant {
        Some(dq) => Some(dq.lattice()?),
        None => None,
    };
    for layer in &mut out.layers {
        let mut q = QuantSpec::parse(&cfg.network.weight_quant)?;
        let flat = layer.weights.as_standard_layout();
        q.set_scales(q.quantizer()?.initial_scales(flat.as_slice().expect("standard layout")));
        layer.quant = q;
        if layer.delays.is_some() {
            layer.lattice = lattice.clone();
        }
    }
    out.snap_to_f32();
    Ok(out)
}

fn posthoc(base_dir: &Path, cfg: &RunConfig) -> Result<SeedRun> {
    let base_cfg = posthoc_base_config(cfg);
    let (base, loss) = load_or_train_base(&base_dir.join(run_id(cfg.seed)), &base_cfg)?;
    let net = requantize(&base, cfg)?;
    let data = load_run_data(cfg)?;
    let test_accuracy = evaluate(&net, &data.test, cfg.training.window)?;
    let train_accuracy = evaluate(&net, &data.train, cfg.training.window)?;
    let hash = cfg.hash();
    let id = run_id(cfg.seed);
    let record = RunRecord::build(
        &net,
        &RecordContext {
            run_id: &id,
            config_hash: &hash,
            seed: cfg.seed,
            hist_bins: cfg.eval.hist_bins,
            long_delay_threshold: cfg.eval.long_delay_threshold,
        },
        EpochMetrics {
            epoch: cfg.training.epochs.saturating_sub(1),
            loss,
            train_acc: train_accuracy,
            test_acc: Some(test_accuracy),
        },
    )?;
    Ok(SeedRun {
        records: vec![record],
        timing: Vec::new(),
        net,
        test_accuracy,
        train_accuracy,
    })
}

fn hidden_label(h: &[usize]) -> String {
    h.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x")
}

fn blank_row(sweep: &str, cell: &Cell, mode: &str) -> GridRow {
    let n = &cell.config.network;
    GridRow {
        sweep: sweep.to_string(),
        cell: cell.key.clone(),
        mode: mode.to_string(),
        wq: n.weight_quant.clone(),
        dq: n.delay_quant.map_or("none".into(), |d| d.to_string()),
        tau_s: n.tau_s,
        tau_r: n.tau_r,
        lambda: n.lambda.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("/"),
        hidden: hidden_label(&n.hidden),
        status: CellStatus::Failed,
        n_seeds: cell.config.sweep.n_seeds,
        test_acc_mean: None,
        test_acc_stderr: None,
        train_acc_mean: None,
        weight_bits: None,
        delay_bits: None,
        total_bits: None,
        f_d: None,
        delay_mean: None,
        delay_mean_stderr: None,
        long_delay_fraction: None,
        distinct_delays_mean: None,
        config_hash: cell.config.hash(),
        error: String::new(),
    }
}

fn summarize(mut row: GridRow, runs: &[SeedRun]) -> GridRow {
    let last: Vec<&RunRecord> = runs.iter().filter_map(|r| r.records.last()).collect();
    let test: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
    let train: Vec<f64> = runs.iter().map(|r| r.train_accuracy).collect();
    let delays: Vec<f64> = last.iter().map(|r| r.delay_mean).collect();
    let mean = |xs: Vec<f64>| mean_stderr(&xs).0;
    let (tm, ts) = mean_stderr(&test);
    let (dm, ds) = mean_stderr(&delays);
    row.status = CellStatus::Completed;
    row.test_acc_mean = Some(tm);
    row.test_acc_stderr = Some(ts);
    row.train_acc_mean = Some(mean(train));
    if !last.is_empty() {
        row.weight_bits = Some(mean(last.iter().map(|r| r.weight_bits).collect()));
        row.delay_bits = Some(mean(last.iter().map(|r| r.delay_bits).collect()));
        row.total_bits = Some(mean(last.iter().map(|r| r.total_bits).collect()));
        row.f_d = Some(mean(last.iter().map(|r| r.f_d).collect()));
        row.delay_mean = Some(dm);
        row.delay_mean_stderr = Some(ds);
        row.long_delay_fraction = Some(mean(last.iter().map(|r| r.long_delay_fraction).collect()));
        row.distinct_delays_mean = Some(mean(last.iter().map(|r| r.distinct_delays as f64).collect()));
    }
    row
}

fn write_cell(dir: &Path, cell: &Cell, runs: &[SeedRun]) -> Result<()> {
    fs::create_dir_all(dir)?;
    cell.config.save(&dir.join("config.snapshot"))?;
    let records: Vec<RunRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    write_records(&dir.join("record.csv"), &records)?;
    let timing: Vec<TimingRow> = runs.iter().flat_map(|r| r.timing.iter().cloned()).collect();
    write_timing(&dir.join("timing.csv"), &timing)?;
    for (s, r) in runs.iter().enumerate() {
        let seed = seed_config(&cell.config, s).seed;
        write_histograms_csv(
            &dir.join(format!("histograms_{}.csv", run_id(seed))),
            &export_histograms(&r.net, cell.config.eval.hist_bins)?,
        )?;
    }
    Ok(())
}

fn completed_row(dir: &Path, hash: &str) -> Option<GridRow> {
    let text = fs::read_to_string(dir.join("result.json")).ok()?;
    let row: GridRow = serde_json::from_str(&text).ok()?;
    (row.status == CellStatus::Completed && row.config_hash == hash).then_some(row)
}

/// Runs every cell not already completed under `opts.out_dir/<sweep>/` and
/// writes `grid.csv`. Cell failures are recorded, not propagated.
pub fn run_sweep(kind: &dyn SweepKind, base: &RunConfig, grid: &GridSpec, opts: &SweepOptions) -> Result<SweepGrid> {
    if opts.posthoc && !kind.supports_posthoc() {
        return Err(Error::Config(format!("sweep `{}` has no post-hoc mode", kind.name())));
    }
    let cells = kind.cells(base, grid)?;
    let root = opts.out_dir.join(kind.name());
    fs::create_dir_all(&root)?;
    let mode = if opts.posthoc { "posthoc" } else { "retrain" };

    let pending: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| completed_row(&root.join(&c.key), &c.config.hash()).is_none())
        .map(|(i, _)| i)
        .collect();
    let n_seeds = base.sweep.n_seeds;
    let base_dir = root.join("_posthoc_base");
    if opts.posthoc {
        // train the shared checkpoints once, before cells race for them
        for s in 0..n_seeds {
            let cfg = posthoc_base_config(&seed_config(&base.clone(), s));
            if let Err(e) = load_or_train_base(&base_dir.join(run_id(cfg.seed)), &cfg) {
                log::warn!("post-hoc base model for seed {} failed: {e}", cfg.seed);
            }
        }
    }
    let jobs: Vec<(usize, usize)> = pending.iter().flat_map(|&c| (0..n_seeds).map(move |s| (c, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(base.sweep.workers)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let results: Vec<((usize, usize), Result<SeedRun>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, s)| {
                let cfg = seed_config(&cells[c].config, s);
                log::info!("sweep {}: cell {} seed {}", kind.name(), cells[c].key, cfg.seed);
                let r = if opts.posthoc { posthoc(&base_dir, &cfg) } else { retrain(&cfg) };
                ((c, s), r)
            })
            .collect()
    });
    let mut by_cell: BTreeMap<usize, Vec<(usize, Result<SeedRun>)>> = BTreeMap::new();
    for ((c, s), r) in results {
        by_cell.entry(c).or_default().push((s, r));
    }

    let mut rows = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let dir = root.join(&cell.key);
        if let Some(row) = completed_row(&dir, &cell.config.hash()) {
            rows.push(row);
            continue;
        }
        let mut seeds = by_cell.remove(&i).unwrap_or_default();
        seeds.sort_by_key(|(s, _)| *s);
        let mut runs = Vec::new();
        let mut errors = Vec::new();
        for (s, r) in seeds {
            match r {
                Ok(run) => runs.push(run),
                Err(e) => errors.push(format!("seed {}: {e}", seed_config(&cell.config, s).seed)),
            }
        }
        let mut row = blank_row(kind.name(), cell, mode);
        if errors.is_empty() {
            match write_cell(&dir, cell, &runs) {
                Ok(()) => row = summarize(row, &runs),
                Err(e) => row.error = e.to_string(),
            }
        } else {
            log::warn!("cell {} failed: {}", cell.key, errors.join("; "));
            row.error = errors.join("; ");
        }
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("result.json"), serde_json::to_string_pretty(&row)?)?;
        rows.push(row);
    }
    let grid = SweepGrid {
        name: kind.name().to_string(),
        rows,
    };
    grid.write_csv(&root.join("grid.csv"))?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        let mut c = RunConfig::from_toml_str(
            "[data]\nsource = \"gen:interval:train=16,test=8,inputs=16,pool=4\"\nn_steps = 60\n[network]\nhidden = [6]\n",
        )
        .unwrap();
        c.training.epochs = 1;
        c.training.batch_size = 8;
        c.sweep.n_seeds = 2;
        c.sweep.workers = 2;
        c
    }

    fn grid(axes: &[&str]) -> GridSpec {
        GridSpec::parse(&axes.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn registry_and_cells() {
        let names: Vec<_> = registry().names().collect();
        assert_eq!(names, ["bits", "lambda", "tau", "width"]);
        assert!(registry().build("depth").is_err());
        let bits = registry().build("bits").unwrap();
        let cells = bits.cells(&base(), &grid(&["wq=full;ternary", "dq=none;4,2,learn"])).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[3].key, "wq=ternary__dq=4-2-learn");
        assert_eq!(cells[3].config.network.delay_quant.unwrap().levels, 4);
        assert!(bits.cells(&base(), &grid(&["wq=full"])).is_err());
        assert!(bits.cells(&base(), &grid(&["wq=m0", "dq=none"])).is_err());
        assert!(bits.cells(&base(), &grid(&["wq=full", "dq=none", "tau=2"])).is_err());
        let tau = registry().build("tau").unwrap().cells(&base(), &grid(&["tau=2.5"])).unwrap();
        assert_eq!((tau[0].config.network.tau_s, tau[0].config.network.tau_r), (2.5, 2.5));
        let w = registry().build("width").unwrap().cells(&base(), &grid(&["width=3;9"])).unwrap();
        assert_eq!(w[1].config.network.hidden, vec![9]);
        assert!(registry().build("lambda").unwrap().cells(&base(), &grid(&["lambda=-1"])).is_err());
        assert!(GridSpec::parse(&["tau".into()]).is_err());
    }

    #[test]
    fn sweep_writes_layout_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SweepOptions {
            out_dir: dir.path().to_path_buf(),
            posthoc: false,
        };
        let kind = registry().build("lambda").unwrap();
        let g = run_sweep(kind.as_ref(), &base(), &grid(&["lambda=0;0.5"]), &opts).unwrap();
        assert_eq!(g.rows.len(), 2);
        assert!(g.rows.iter().all(|r| r.status == CellStatus::Completed));
        let cell = dir.path().join("lambda/lambda=0");
        for f in ["record.csv", "config.snapshot", "result.json", "histograms_seed0.csv", "histograms_seed1.csv"] {
            assert!(cell.join(f).exists(), "{f}");
        }
        let grid_csv = fs::read_to_string(dir.path().join("lambda/grid.csv")).unwrap();
        assert!(!grid_csv.contains("NaN"));
        assert_eq!(grid_csv.lines().count(), 3);

        // a resumed sweep reuses results without touching the cell files
        let before = fs::metadata(cell.join("record.csv")).unwrap().modified().unwrap();
        let again = run_sweep(kind.as_ref(), &base(), &grid(&["lambda=0;0.5"]), &opts).unwrap();
        assert_eq!(again, g);
        assert_eq!(fs::metadata(cell.join("record.csv")).unwrap().modified().unwrap(), before);
    }

    #[test]
    fn one_cell_sweep_matches_plain_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = base();
        b.sweep.n_seeds = 1;
        let opts = SweepOptions {
            out_dir: dir.path().to_path_buf(),
            posthoc: false,
        };
        let kind = registry().build("tau").unwrap();
        let tau = b.network.tau_s.to_string();
        let g = run_sweep(kind.as_ref(), &b, &grid(&[&format!("tau={tau}")]), &opts).unwrap();
        let plain = retrain(&b).unwrap();
        assert_eq!(g.rows[0].test_acc_mean, Some(plain.test_accuracy));
        let recs = crate::experiments::record::read_records(&dir.path().join("tau").join(&g.rows[0].cell).join("record.csv")).unwrap();
        assert_eq!(recs, plain.records);
    }

    #[test]
    fn failures_are_flagged_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = base();
        b.sweep.n_seeds = 1;
        // the generator rejects 2 steps, so every cell fails at data load
        b.data.source = "gen:interval:steps=2".into();
        let opts = SweepOptions {
            out_dir: dir.path().to_path_buf(),
            posthoc: false,
        };
        let g = run_sweep(registry().build("width").unwrap().as_ref(), &b, &grid(&["width=2"]), &opts).unwrap();
        assert_eq!(g.rows[0].status, CellStatus::Failed);
        assert!(!g.rows[0].error.is_empty());
        assert!(g.rows[0].test_acc_mean.is_none());
    }

    #[test]
    fn posthoc_shares_one_base_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = base();
        b.sweep.n_seeds = 1;
        let opts = SweepOptions {
            out_dir: dir.path().to_path_buf(),
            posthoc: true,
        };
        let bits = registry().build("bits").unwrap();
        let g = run_sweep(bits.as_ref(), &b, &grid(&["wq=full;ternary", "dq=none;3,2,0"]), &opts).unwrap();
        assert!(g.rows.iter().all(|r| r.status == CellStatus::Completed && r.mode == "posthoc"));
        // the (full, none) cell is the base model itself
        let plain = retrain(&b).unwrap();
        assert_eq!(g.row("wq=full__dq=none").unwrap().test_acc_mean, Some(plain.test_accuracy));
        assert!(g.row("wq=ternary__dq=3-2-0").unwrap().delay_bits.unwrap() > 0.0);
        assert!(run_sweep(registry().build("tau").unwrap().as_ref(), &b, &grid(&["tau=1"]), &opts).is_err());
    }
}
