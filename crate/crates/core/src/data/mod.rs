//! Datasets: event files, binning, and synthetic temporal tasks.

pub mod events;
pub mod generators;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::SpikeTensor;

pub use events::{load_events, save_events, EventHeader, EventSample};
pub use generators::{gen_interval_task, gen_rate_task, GenParams, IntervalTask, RateTask, TaskGenerator};

/// One binned sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub raster: SpikeTensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_inputs: usize,
    pub n_classes: usize,
    /// Bin width in ms.
    pub step_ms: f64,
    pub n_steps: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Result of binning one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    pub raster: SpikeTensor,
    /// Events that fell at or past the horizon.
    pub dropped: usize,
}

/// `raster[floor(t / step_ms), i] = 1`; events past the last bin are counted and dropped.
pub fn bin_events(sample: &EventSample, step_ms: f64, n_steps: usize, n_inputs: usize) -> Result<Binned> {
    if !(step_ms > 0.0) {
        return Err(Error::param("step_ms", "bin width must be > 0"));
    }
    let mut raster = SpikeTensor::zeros(n_steps, n_inputs)?.with_step_size(step_ms);
    let mut dropped = 0;
    for &(i, t) in &sample.events {
        if i >= n_inputs {
            return Err(Error::Input(format!("neuron id {i} >= n_inputs {n_inputs}")));
        }
        let bin = (t / step_ms).floor();
        if bin >= n_steps as f64 {
            dropped += 1;
        } else {
            raster.set(bin as usize, i, true);
        }
    }
    Ok(Binned { raster, dropped })
}

/// Converts a raster back to events at bin starts.
pub fn raster_to_events(sample: &Sample, step_ms: f64) -> EventSample {
    EventSample {
        events: sample
            .raster
            .events()
            .map(|(t, i)| (i, t as f64 * step_ms))
            .collect(),
        label: sample.label,
        duration: sample.raster.n_steps() as f64 * step_ms,
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// `gen:<task>[:k=v,...]`
    Generator { task: String, params: GenParams },
    /// Event file(s). Without a separate test file every fourth sample is held out.
    Files { train: PathBuf, test: Option<PathBuf> },
}

impl DataSource {
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("gen:") {
            let (task, params) = rest.split_once(':').unwrap_or((rest, ""));
            if task.is_empty() {
                return Err(Error::Config(format!("missing generator name in `{spec}`")));
            }
            Ok(DataSource::Generator {
                task: task.to_string(),
                params: GenParams::parse(params)?,
            })
        } else if spec.is_empty() {
            Err(Error::Config("empty data source".into()))
        } else {
            Ok(DataSource::Files {
                train: PathBuf::from(spec),
                test: None,
            })
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DataSource::Generator { task, params } => {
                let p = params.to_string();
                if p.is_empty() {
                    format!("gen:{task}")
                } else {
                    format!("gen:{task}:{p}")
                }
            }
            DataSource::Files { train, test } => match test {
                Some(t) => format!("{}|{}", train.display(), t.display()),
                None => train.display().to_string(),
            },
        }
    }
}

fn bin_all(samples: &[EventSample], header: EventHeader, step_ms: f64, n_steps: usize, path: &Path) -> Result<Vec<Sample>> {
    let horizon = step_ms * n_steps as f64;
    let mut dropped = 0;
    let out = samples
        .iter()
        .map(|s| {
            if s.duration > horizon {
                return Err(Error::Config(format!(
                    "{}: sample duration {} ms exceeds n_steps * step_ms = {horizon} ms",
                    path.display(),
                    s.duration
                )));
            }
            let b = bin_events(s, step_ms, n_steps, header.n_inputs)?;
            dropped += b.dropped;
            Ok(Sample {
                raster: b.raster,
                label: s.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if dropped > 0 {
        log::warn!("{}: {dropped} events fell past the horizon and were dropped", path.display());
    }
    Ok(out)
}

/// Loads or generates a dataset. `step_ms`/`n_steps` set the binning of
/// event files; generators use `n_steps` unless their parameters override it.
pub fn load_dataset(source: &DataSource, step_ms: f64, n_steps: usize, seed: u64) -> Result<Dataset> {
    match source {
        DataSource::Generator { task, params } => {
            let gen = generators::registry().build(task)?;
            gen.generate(params, n_steps, seed)
        }
        DataSource::Files { train, test } => {
            let (header, samples) = load_events(train)?;
            let mut binned = bin_all(&samples, header, step_ms, n_steps, train)?;
            let (train_set, test_set) = match test {
                Some(tp) => {
                    let (th, ts) = load_events(tp)?;
                    if th != header {
                        return Err(Error::Input(format!(
                            "{}: header differs from {}",
                            tp.display(),
                            train.display()
                        )));
                    }
                    (binned, bin_all(&ts, th, step_ms, n_steps, tp)?)
                }
                None => {
                    let mut tr = Vec::new();
                    let mut te = Vec::new();
                    for (k, s) in binned.drain(..).enumerate() {
                        if k % 4 == 3 {
                            te.push(s)
                        } else {
                            tr.push(s)
                        }
                    }
                    (tr, te)
                }
            };
            if train_set.is_empty() || test_set.is_empty() {
                return Err(Error::Input("dataset needs at least one train and one test sample".into()));
            }
            Ok(Dataset {
                manifest: DatasetManifest {
                    n_inputs: header.n_inputs,
                    n_classes: header.n_classes,
                    step_ms,
                    n_steps,
                    n_train: train_set.len(),
                    n_test: test_set.len(),
                    source: source.describe(),
                },
                train: train_set,
                test: test_set,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binning_examples() {
        let s = EventSample {
            events: vec![(0, 2.4), (1, 2.1), (1, 2.9), (0, 10.0)],
            label: 0,
            duration: 10.0,
        };
        let b = bin_events(&s, 1.0, 10, 2).unwrap();
        assert!(b.raster.get(2, 0));
        assert!(b.raster.get(2, 1));
        assert_eq!(b.raster.count(), 2);
        assert_eq!(b.dropped, 1);
    }

    #[test]
    fn silent_sample() {
        let s = EventSample { events: vec![], label: 1, duration: 5.0 };
        assert_eq!(bin_events(&s, 1.0, 5, 3).unwrap().raster.count(), 0);
    }

    #[test]
    fn source_parsing() {
        match DataSource::parse("gen:interval:classes=4,jitter=1").unwrap() {
            DataSource::Generator { task, params } => {
                assert_eq!(task, "interval");
                assert_eq!(params.get_usize("classes", 0).unwrap(), 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(DataSource::parse("data.evt").unwrap(), DataSource::Files { .. }));
        assert!(DataSource::parse("gen:").is_err());
        assert!(DataSource::parse("").is_err());
    }
}
