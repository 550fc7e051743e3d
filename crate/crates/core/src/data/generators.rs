//! Synthetic tasks, registered by name.
//!
//! `interval`: two spikes, a reference on one channel of pool A and a probe
//! on one channel of pool B, separated by a class-specific gap. Channels are
//! drawn per sample, so spike counts and channel statistics carry no class
//! information; only the relative timing does.
//!
//! `rate`: class `k` raises the firing probability of channel group `k`.
//! Spike timing is irrelevant.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::spike::SpikeTensor;

/// `key=value` parameters of a generator spec.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenParams(pub BTreeMap<String, String>);

impl GenParams {
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = BTreeMap::new();
        for kv in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("generator parameter `{kv}` is not key=value")))?;
            m.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(m))
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.0.get(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| Error::Config(format!("generator parameter `{key}={v}` is not an integer")))
        })
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.0.get(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| Error::Config(format!("generator parameter `{key}={v}` is not a number")))
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!(
                "unknown generator parameter `{k}` (known: {})",
                known.join(", ")
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for GenParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

pub trait TaskGenerator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Builds train and test splits. `default_steps` applies when the
    /// parameters do not set `steps`; a `seed` parameter overrides `seed`.
    fn generate(&self, params: &GenParams, default_steps: usize, seed: u64) -> Result<Dataset>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTask {
    pub classes: usize,
    pub inputs: usize,
    pub steps: usize,
    pub jitter: usize,
    pub gap_min: usize,
    pub gap_step: usize,
    /// Channels per pool; pool A is `[0, pool)`, pool B `[pool, 2·pool)`.
    pub pool: usize,
    /// Channels firing together for each of the two events.
    pub fan: usize,
}

impl Default for IntervalTask {
    fn default() -> Self {
        Self {
            classes: 4,
            inputs: 64,
            steps: 100,
            jitter: 1,
            gap_min: 6,
            gap_step: 6,
            pool: 2,
            fan: 1,
        }
    }
}

/// Steps reserved after the latest probe for the response to propagate.
const RESPONSE_MARGIN: usize = 4;

impl IntervalTask {
    pub fn gap(&self, class: usize) -> usize {
        self.gap_min + class * self.gap_step
    }

    fn onset_range(&self) -> Result<(usize, usize)> {
        if self.classes == 0 || self.pool == 0 || self.gap_min == 0 {
            return Err(Error::param("interval", "classes, pool and gap_min must be >= 1"));
        }
        if self.fan == 0 || self.fan > self.pool {
            return Err(Error::param("interval", format!("fan {} must be in [1, pool {}]", self.fan, self.pool)));
        }
        if 2 * self.pool > self.inputs {
            return Err(Error::param("interval", format!("two pools of {} exceed {} inputs", self.pool, self.inputs)));
        }
        if self.classes > 1 && self.gap_step <= 2 * self.jitter {
            return Err(Error::param(
                "interval",
                format!("gap_step {} does not separate classes under jitter {}", self.gap_step, self.jitter),
            ));
        }
        let gap_max = self.gap(self.classes - 1);
        let lo = self.jitter;
        let need = lo + gap_max + self.jitter + RESPONSE_MARGIN + 1;
        if need > self.steps {
            return Err(Error::param(
                "interval",
                format!("largest gap {gap_max} with jitter {} does not fit in {} steps", self.jitter, self.steps),
            ));
        }
        Ok((lo, self.steps - need + lo))
    }

    pub fn sample(&self, label: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
        let (lo, hi) = self.onset_range()?;
        let j = self.jitter as i64;
        let t0 = rng.random_range(lo..=hi) as i64;
        let jit = |rng: &mut ChaCha8Rng| if j == 0 { 0 } else { rng.random_range(-j..=j) };
        let t_ref = (t0 + jit(rng)) as usize;
        let t_probe = (t0 + self.gap(label) as i64 + jit(rng)) as usize;
        let a = rand::seq::index::sample(rng, self.pool, self.fan);
        let b = rand::seq::index::sample(rng, self.pool, self.fan);
        let events = a
            .iter()
            .map(|c| (t_ref, c))
            .chain(b.iter().map(|c| (t_probe, self.pool + c)))
            .collect::<Vec<_>>();
        Ok(Sample {
            raster: SpikeTensor::from_events(self.steps, self.inputs, events)?,
            label,
        })
    }
}

/// Balanced interval-task samples; sample `k` has label `k mod classes`.
pub fn gen_interval_task(task: &IntervalTask, n_samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
    task.onset_range()?;
    (0..n_samples).map(|k| task.sample(k % task.classes, rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTask {
    pub classes: usize,
    pub inputs: usize,
    pub steps: usize,
    pub rate_hi: f64,
    pub rate_lo: f64,
}

impl Default for RateTask {
    fn default() -> Self {
        Self {
            classes: 4,
            inputs: 64,
            steps: 100,
            rate_hi: 0.05,
            rate_lo: 0.01,
        }
    }
}

impl RateTask {
    fn group(&self, class: usize) -> std::ops::Range<usize> {
        let g = self.inputs / self.classes;
        class * g..(class + 1) * g
    }

    pub fn sample(&self, label: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
        let group = self.group(label);
        let mut raster = SpikeTensor::zeros(self.steps, self.inputs)?;
        for t in 0..self.steps {
            for i in 0..self.inputs {
                let p = if group.contains(&i) { self.rate_hi } else { self.rate_lo };
                if rng.random::<f64>() < p {
                    raster.set(t, i, true);
                }
            }
        }
        Ok(Sample { raster, label })
    }
}

pub fn gen_rate_task(task: &RateTask, n_samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
    if task.classes == 0 || task.inputs < task.classes {
        return Err(Error::param("rate", "need at least one input channel per class"));
    }
    if !(0.0..=1.0).contains(&task.rate_hi) || !(0.0..=1.0).contains(&task.rate_lo) {
        return Err(Error::param("rate", "rates are per-step probabilities in [0, 1]"));
    }
    (0..n_samples).map(|k| task.sample(k % task.classes, rng)).collect()
}

fn split_sizes(params: &GenParams) -> Result<(usize, usize)> {
    let train = params.get_usize("train", 512)?;
    let test = params.get_usize("test", 256)?;
    if train == 0 || test == 0 {
        return Err(Error::param("dataset", "train and test sizes must be >= 1"));
    }
    Ok((train, test))
}

fn shuffled(mut v: Vec<Sample>, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    v.shuffle(rng);
    v
}

#[allow(clippy::too_many_arguments)]
fn manifest(task: &str, params: &GenParams, inputs: usize, classes: usize, steps: usize, n_train: usize, n_test: usize, seed: u64) -> DatasetManifest {
    DatasetManifest {
        n_inputs: inputs,
        n_classes: classes,
        step_ms: 1.0,
        n_steps: steps,
        n_train,
        n_test,
        source: format!("gen:{task}:{params} seed={seed}"),
    }
}

impl TaskGenerator for IntervalTask {
    fn name(&self) -> &'static str {
        "interval"
    }

    fn generate(&self, params: &GenParams, default_steps: usize, seed: u64) -> Result<Dataset> {
        params.check_known(&["classes", "inputs", "steps", "jitter", "gap_min", "gap_step", "pool", "fan", "train", "test", "seed"])?;
        let d = IntervalTask::default();
        let task = IntervalTask {
            classes: params.get_usize("classes", d.classes)?,
            inputs: params.get_usize("inputs", d.inputs)?,
            steps: params.get_usize("steps", default_steps)?,
            jitter: params.get_usize("jitter", d.jitter)?,
            gap_min: params.get_usize("gap_min", d.gap_min)?,
            gap_step: params.get_usize("gap_step", d.gap_step)?,
            pool: params.get_usize("pool", d.pool)?,
            fan: params.get_usize("fan", d.fan)?,
        };
        let seed = params.get_usize("seed", seed as usize)? as u64;
        let (n_train, n_test) = split_sizes(params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = shuffled(gen_interval_task(&task, n_train, &mut rng)?, &mut rng);
        let test = gen_interval_task(&task, n_test, &mut rng)?;
        Ok(Dataset {
            manifest: manifest("interval", params, task.inputs, task.classes, task.steps, n_train, n_test, seed),
            train,
            test,
        })
    }
}

impl TaskGenerator for RateTask {
    fn name(&self) -> &'static str {
        "rate"
    }

    fn generate(&self, params: &GenParams, default_steps: usize, seed: u64) -> Result<Dataset> {
        params.check_known(&["classes", "inputs", "steps", "rate_hi", "rate_lo", "train", "test", "seed"])?;
        let d = RateTask::default();
        let task = RateTask {
            classes: params.get_usize("classes", d.classes)?,
            inputs: params.get_usize("inputs", d.inputs)?,
            steps: params.get_usize("steps", default_steps)?,
            rate_hi: params.get_f64("rate_hi", d.rate_hi)?,
            rate_lo: params.get_f64("rate_lo", d.rate_lo)?,
        };
        let seed = params.get_usize("seed", seed as usize)? as u64;
        let (n_train, n_test) = split_sizes(params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = shuffled(gen_rate_task(&task, n_train, &mut rng)?, &mut rng);
        let test = gen_rate_task(&task, n_test, &mut rng)?;
        Ok(Dataset {
            manifest: manifest("rate", params, task.inputs, task.classes, task.steps, n_train, n_test, seed),
            train,
            test,
        })
    }
}

type Factory = fn() -> Box<dyn TaskGenerator>;

pub struct GeneratorRegistry {
    entries: BTreeMap<&'static str, Factory>,
}

impl GeneratorRegistry {
    pub fn with_builtins() -> Self {
        let mut entries: BTreeMap<&'static str, Factory> = BTreeMap::new();
        entries.insert("interval", || Box::new(IntervalTask::default()));
        entries.insert("rate", || Box::new(RateTask::default()));
        Self { entries }
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn TaskGenerator>> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| {
            Error::Config(format!(
                "unknown generator `{name}` (known: {})",
                self.entries.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

pub fn registry() -> &'static GeneratorRegistry {
    static REGISTRY: OnceLock<GeneratorRegistry> = OnceLock::new();
    REGISTRY.get_or_init(GeneratorRegistry::with_builtins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_two_spikes_per_sample() {
        let task = IntervalTask {
            classes: 2,
            jitter: 0,
            gap_min: 3,
            gap_step: 6,
            ..IntervalTask::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = gen_interval_task(&task, 40, &mut rng).unwrap();
        for s in &samples {
            assert_eq!(s.raster.count(), 2);
            let ev: Vec<_> = s.raster.events().collect();
            let (ta, ca) = ev.iter().copied().find(|&(_, c)| c < task.pool).unwrap();
            let (tb, cb) = ev.iter().copied().find(|&(_, c)| c >= task.pool).unwrap();
            assert!(ca < task.pool && (task.pool..2 * task.pool).contains(&cb));
            assert_eq!(tb - ta, [3, 9][s.label]);
        }
    }

    #[test]
    fn interval_infeasible_geometry() {
        let task = IntervalTask {
            steps: 20,
            ..IntervalTask::default()
        };
        assert!(gen_interval_task(&task, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let task = IntervalTask {
            gap_step: 2,
            jitter: 1,
            ..IntervalTask::default()
        };
        assert!(gen_interval_task(&task, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn generators_are_seeded() {
        let g = registry().build("interval").unwrap();
        let p = GenParams::parse("train=16,test=8").unwrap();
        assert_eq!(g.generate(&p, 100, 5).unwrap(), g.generate(&p, 100, 5).unwrap());
        assert_ne!(g.generate(&p, 100, 5).unwrap(), g.generate(&p, 100, 6).unwrap());
        let r = registry().build("rate").unwrap();
        assert_eq!(r.generate(&p, 50, 5).unwrap(), r.generate(&p, 50, 5).unwrap());
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(registry().build("nope").is_err());
        let g = registry().build("interval").unwrap();
        assert!(g.generate(&GenParams::parse("colour=red").unwrap(), 100, 1).is_err());
    }

    #[test]
    fn rate_class_from_counts() {
        let task = RateTask::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in gen_rate_task(&task, 40, &mut rng).unwrap() {
            let per_channel = s.raster.counts_in(0, task.steps);
            let group_sum = |k: usize| task.group(k).map(|i| per_channel[i]).sum::<usize>();
            let best = (0..task.classes).max_by_key(|&k| group_sum(k)).unwrap();
            assert_eq!(best, s.label);
        }
    }
}
