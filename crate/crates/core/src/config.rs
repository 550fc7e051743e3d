//! Resolved run configuration.
//!
//! Precedence is defaults < TOML file < explicit overrides. The config hash
//! is the SHA-256 of the canonical JSON form (object keys sorted), so it does
//! not depend on key order in the source file.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataSource, DatasetManifest};
use crate::delay::DelayLattice;
use crate::error::{Error, Result};
use crate::quant::QuantSpec;
use crate::train::{NetworkSpec, NeuronConfig, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Event file path or `gen:<task>[:k=v,...]`.
    pub source: String,
    /// Optional separate test file for event-file sources.
    pub test: Option<String>,
    /// Bin width in ms.
    pub step_ms: f64,
    pub n_steps: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: "gen:interval".into(),
            test: None,
            step_ms: 1.0,
            n_steps: 100,
        }
    }
}

impl DataConfig {
    pub fn data_source(&self) -> Result<DataSource> {
        let mut src = DataSource::parse(&self.source)?;
        if let Some(t) = &self.test {
            match &mut src {
                DataSource::Files { test, .. } => *test = Some(t.into()),
                DataSource::Generator { .. } => {
                    return Err(Error::Config("a test file only applies to event-file sources".into()))
                }
            }
        }
        Ok(src)
    }
}

/// Delay lattice settings: `levels` grid points `offset + k·step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayQuantConfig {
    pub levels: u32,
    pub step: f64,
    pub offset: f64,
    pub learn_offset: bool,
}

impl DelayQuantConfig {
    /// Parses `<levels>,<step>,<offset|learn>`; trailing fields default to
    /// step 1 and offset 0.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("delay lattice `{s}`: {m}"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.is_empty() || parts.len() > 3 || parts[0].is_empty() {
            return Err(bad("expected <levels>,<step>,<offset|learn>".into()));
        }
        let levels: u32 = parts[0].parse().map_err(|_| bad("levels is not an integer".into()))?;
        let step: f64 = match parts.get(1) {
            Some(v) => v.parse().map_err(|_| bad("step is not a number".into()))?,
            None => 1.0,
        };
        let (offset, learn_offset) = match parts.get(2) {
            Some(&"learn") => (0.0, true),
            Some(v) => (v.parse().map_err(|_| bad("offset is not a number or `learn`".into()))?, false),
            None => (0.0, false),
        };
        let cfg = Self {
            levels,
            step,
            offset,
            learn_offset,
        };
        cfg.lattice()?;
        Ok(cfg)
    }

    pub fn lattice(&self) -> Result<DelayLattice> {
        DelayLattice::new(self.offset, self.step, Some(self.levels), self.learn_offset)
    }
}

impl std::fmt::Display for DelayQuantConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.learn_offset {
            write!(f, "{},{},learn", self.levels, self.step)
        } else {
            write!(f, "{},{},{}", self.levels, self.step, self.offset)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub delays: bool,
    /// Delay cap in steps; absent means unbounded.
    pub theta_d: Option<f64>,
    pub tau_s: f64,
    pub tau_r: f64,
    pub theta_u: f64,
    /// `full`, `m<bits>`, `ternary` or `ternary-learn`.
    pub weight_quant: String,
    pub delay_quant: Option<DelayQuantConfig>,
    /// Per-hidden-layer delay L2 coefficients; one value is broadcast.
    pub lambda: Vec<f64>,
    pub init_gain: f64,
    pub delay_init_max: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let spec = NetworkSpec::default();
        Self {
            hidden: spec.hidden,
            delays: spec.delays,
            theta_d: None,
            tau_s: spec.neuron.tau_s,
            tau_r: spec.neuron.tau_r,
            theta_u: spec.neuron.theta_u,
            weight_quant: spec.weight_quant,
            delay_quant: None,
            lambda: spec.lambda,
            init_gain: spec.init_gain,
            delay_init_max: spec.delay_init_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate the test split every `eval_every` epochs; 0 evaluates only at the end.
    pub eval_every: usize,
    pub hist_bins: usize,
    /// Delays above this many steps count as long.
    pub long_delay_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eval_every: 0,
            hist_bins: 20,
            long_delay_threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_seeds: usize,
    /// Worker threads for independent cells; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { n_seeds: 3, workers: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}


/// Per-component seeds split from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentSeeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl ComponentSeeds {
    pub fn from_run_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            data: rng.next_u64(),
            init: rng.next_u64(),
            shuffle: rng.next_u64(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)
    }

    pub fn seeds(&self) -> ComponentSeeds {
        ComponentSeeds::from_run_seed(self.seed)
    }

    /// Training settings with the shuffle seed filled in.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seeds().shuffle,
            ..self.training.clone()
        }
    }

    pub fn neuron(&self) -> NeuronConfig {
        NeuronConfig {
            tau_s: self.network.tau_s,
            tau_r: self.network.tau_r,
            theta_u: self.network.theta_u,
        }
    }

    pub fn network_spec(&self, manifest: &DatasetManifest) -> Result<NetworkSpec> {
        let n = &self.network;
        let lattice = match &n.delay_quant {
            Some(dq) => Some(dq.lattice()?),
            None => None,
        };
        Ok(NetworkSpec {
            n_inputs: manifest.n_inputs,
            hidden: n.hidden.clone(),
            n_classes: manifest.n_classes,
            n_steps: manifest.n_steps,
            neuron: self.neuron(),
            delays: n.delays,
            theta_d: n.theta_d.unwrap_or(f64::INFINITY),
            weight_quant: n.weight_quant.clone(),
            lattice,
            lambda: n.lambda.clone(),
            init_gain: n.init_gain,
            delay_init_max: n.delay_init_max,
        })
    }

    /// Checks every field that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        self.data.data_source()?;
        if !(self.data.step_ms > 0.0) || self.data.n_steps == 0 {
            return Err(Error::Config("data.step_ms must be > 0 and data.n_steps >= 1".into()));
        }
        let n = &self.network;
        if n.hidden.is_empty() {
            return Err(Error::Config("network.hidden needs at least one layer".into()));
        }
        if n.theta_d.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::Config("network.theta_d must be >= 0".into()));
        }
        QuantSpec::parse(&n.weight_quant)?;
        let probe = DatasetManifest {
            n_inputs: 1,
            n_classes: 1,
            step_ms: self.data.step_ms,
            n_steps: self.data.n_steps,
            n_train: 0,
            n_test: 0,
            source: String::new(),
        };
        self.network_spec(&probe)?.validate()?;
        self.training.validate(self.data.n_steps)?;
        if self.eval.hist_bins == 0 {
            return Err(Error::Config("eval.hist_bins must be >= 1".into()));
        }
        if self.sweep.n_seeds == 0 {
            return Err(Error::Config("sweep.n_seeds must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a = RunConfig::from_toml_str("seed = 3\n[network]\ntau_s = 2.0\ntau_r = 2.0\n").unwrap();
        let b = RunConfig::from_toml_str("[network]\ntau_r = 2.0\ntau_s = 2.0\n\n[data]\n\n[training]\n").unwrap();
        let b = RunConfig { seed: 3, ..b };
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.network.delay_quant = Some(DelayQuantConfig::parse("5,2,learn").unwrap());
        c.network.theta_d = Some(40.0);
        c.training.window = Some(25);
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_toml_str("sed = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[network]\nwidth = 3\n").is_err());
    }

    #[test]
    fn delay_quant_parsing() {
        let d = DelayQuantConfig::parse("8,1.5,0.5").unwrap();
        assert_eq!((d.levels, d.step, d.offset, d.learn_offset), (8, 1.5, 0.5, false));
        let d = DelayQuantConfig::parse("5").unwrap();
        assert_eq!((d.levels, d.step, d.offset), (5, 1.0, 0.0));
        assert!(DelayQuantConfig::parse("4,1,learn").unwrap().learn_offset);
        assert!(DelayQuantConfig::parse("0,1,0").is_err());
        assert!(DelayQuantConfig::parse("4,-1,0").is_err());
        assert!(DelayQuantConfig::parse("x").is_err());
        assert_eq!(DelayQuantConfig::parse("4,2,learn").unwrap().to_string(), "4,2,learn");
    }

    #[test]
    fn seeds_are_split_deterministically() {
        let a = ComponentSeeds::from_run_seed(7);
        assert_eq!(a, ComponentSeeds::from_run_seed(7));
        assert_ne!(a, ComponentSeeds::from_run_seed(8));
        assert!(a.data != a.init && a.init != a.shuffle);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.network.weight_quant = "m0".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.network.hidden.clear();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.source = String::new();
        assert!(c.validate().is_err());
    }
}
