use std::fs;
use std::path::{Path, PathBuf};

use delaysnn::config::RunConfig;
use delaysnn::data::{raster_to_events, save_events, Dataset, EventHeader, Sample};
use delaysnn::experiments::ablation::{ablate_delays, fraction_at_loss, pruning_curve, DelaySelection, PruneOrder};
use delaysnn::experiments::footprint::{architecture_footprint, memory_footprint, Footprint};
use delaysnn::experiments::run::{init_network, load_run_data, train_run, write_run_artifacts};
use delaysnn::experiments::sweep::{self, run_id, run_sweep, CellStatus, GridSpec, SweepOptions};
use delaysnn::quant::QuantSpec;
use delaysnn::train::{evaluate, load_checkpoint, Network};
use delaysnn::{Error, Result};
use serde::Serialize;

use crate::args::{parse_list, AblateArgs, EvalArgs, FootprintArgs, GendataArgs, SweepArgs, TrainArgs};

/// `config.snapshot` next to a checkpoint, if any.
fn sibling_snapshot(checkpoint: &Path) -> Option<PathBuf> {
    let p = checkpoint.parent()?.join("config.snapshot");
    p.exists().then_some(p)
}

fn check_compatible(net: &Network, data: &Dataset) -> Result<()> {
    let m = &data.manifest;
    if net.n_inputs != m.n_inputs || net.n_classes() != m.n_classes || net.n_steps != m.n_steps {
        return Err(Error::Config(format!(
            "checkpoint expects {} inputs, {} classes, {} steps; dataset has {}, {}, {}",
            net.n_inputs,
            net.n_classes(),
            net.n_steps,
            m.n_inputs,
            m.n_classes,
            m.n_steps
        )));
    }
    Ok(())
}

fn print_footprint(f: &Footprint) {
    println!("weight_bits {}", f.weight_bits);
    println!("sparse_weight_bits {}", f.sparse_weight_bits);
    println!("delay_bits {}", f.delay_bits);
    println!("delay_info_bits {}", f.delay_info_bits);
    println!("total_bits {}", f.total_bits);
    println!("total_mbit {:.6}", f.total_mbit());
    println!("f_d {}", f.f_d);
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.common.resolve(None)?;
    let data = load_run_data(&cfg)?;
    let net = match &args.init_checkpoint {
        Some(p) => {
            let net = load_checkpoint(p)?;
            check_compatible(&net, &data)?;
            fs::create_dir_all(&args.out)?;
            fs::copy(p, args.out.join("init.bin"))?;
            net
        }
        None => init_network(&cfg, &data.manifest)?,
    };
    log::info!("config {} on {}", cfg.hash(), data.manifest.source);
    let out = train_run(&cfg, &data, net, &run_id(cfg.seed), &mut |r| {
        log::info!(
            "epoch {} loss {:.4} train {:.4}{}",
            r.epoch,
            r.loss,
            r.train_acc,
            r.test_acc.map(|a| format!(" test {a:.4}")).unwrap_or_default()
        );
    })?;
    write_run_artifacts(&args.out, &cfg, &out)?;
    println!("test_accuracy {}", out.test_accuracy);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let net = load_checkpoint(&args.checkpoint)?;
    let cfg = args.common.resolve(sibling_snapshot(&args.checkpoint).as_deref())?;
    let data = load_run_data(&cfg)?;
    check_compatible(&net, &data)?;
    println!("accuracy {}", evaluate(&net, &data.test, cfg.training.window)?);
    if args.footprint {
        print_footprint(&memory_footprint(&net)?);
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let kind = sweep::registry().build(&args.kind)?;
    let mut cfg = args.common.resolve(None)?;
    if let Some(n) = args.n_seeds {
        cfg.sweep.n_seeds = n;
    }
    if let Some(w) = args.workers {
        cfg.sweep.workers = w;
    }
    cfg.validate()?;
    let grid = GridSpec::parse(&args.axes)?;
    let opts = SweepOptions {
        out_dir: args.out.clone(),
        posthoc: args.posthoc,
    };
    let g = run_sweep(kind.as_ref(), &cfg, &grid, &opts)?;
    for r in &g.rows {
        match (r.status, r.test_acc_mean, r.test_acc_stderr) {
            (CellStatus::Completed, Some(m), Some(e)) => println!("{} test {m:.4} ± {e:.4}", r.cell),
            _ => println!("{} failed: {}", r.cell, r.error),
        }
    }
    println!("grid {}", args.out.join(kind.name()).join("grid.csv").display());
    Ok(())
}

fn parse_selection(s: &str) -> Result<DelaySelection> {
    let bad = || Error::Config(format!("--zero `{s}`: expected all, longest:<k>, shortest:<k> or <layer>:<neuron>"));
    if s == "all" {
        return Ok(DelaySelection::All);
    }
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let k: usize = b.parse().map_err(|_| bad())?;
    Ok(match a {
        "longest" => DelaySelection::Longest(k),
        "shortest" => DelaySelection::Shortest(k),
        l => DelaySelection::Neurons(vec![(l.parse().map_err(|_| bad())?, k)]),
    })
}

#[derive(Serialize)]
struct AblationRow<'a> {
    selection: &'a str,
    accuracy: f64,
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let net = load_checkpoint(&args.checkpoint)?;
    let cfg = args.common.resolve(sibling_snapshot(&args.checkpoint).as_deref())?;
    let data = load_run_data(&cfg)?;
    check_compatible(&net, &data)?;
    let fractions: Vec<f64> = parse_list(&args.fractions, "--fractions")?;
    let selections = args.zero.iter().map(|s| parse_selection(s)).collect::<Result<Vec<_>>>()?;
    let window = cfg.training.window;
    fs::create_dir_all(&args.out)?;
    cfg.save(&args.out.join("config.snapshot"))?;

    println!("baseline_accuracy {}", evaluate(&net, &data.test, window)?);
    let mut w = csv::Writer::from_path(args.out.join("prune.csv"))?;
    for order in [PruneOrder::ShortFirst, PruneOrder::LongFirst] {
        let curve = pruning_curve(&net, &data.test, &fractions, order, window)?;
        for p in &curve {
            w.serialize(p)?;
        }
        match fraction_at_loss(&curve, 0.5) {
            Some(f) => println!("{order} half_loss_fraction {f}"),
            None => println!("{order} half_loss_fraction none"),
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(args.out.join("ablate.csv"))?;
    for (text, sel) in args.zero.iter().zip(&selections) {
        let accuracy = evaluate(&ablate_delays(&net, sel)?, &data.test, window)?;
        println!("zero {text} accuracy {accuracy}");
        w.serialize(AblationRow { selection: text, accuracy })?;
    }
    w.flush()?;
    Ok(())
}

fn write_split(path: &Path, data: &Dataset, samples: &[Sample]) -> Result<()> {
    let header = EventHeader {
        n_inputs: data.manifest.n_inputs,
        n_classes: data.manifest.n_classes,
    };
    let events: Vec<_> = samples.iter().map(|s| raster_to_events(s, data.manifest.step_ms)).collect();
    save_events(path, header, &events)
}

pub fn gendata(args: &GendataArgs) -> Result<()> {
    let cfg: RunConfig = args.common.resolve(None)?;
    let data = load_run_data(&cfg)?;
    fs::create_dir_all(&args.out)?;
    write_split(&args.out.join("train.evt"), &data, &data.train)?;
    write_split(&args.out.join("test.evt"), &data, &data.test)?;
    cfg.save(&args.out.join("config.snapshot"))?;
    println!(
        "wrote {} train and {} test samples to {}",
        data.train.len(),
        data.test.len(),
        args.out.display()
    );
    Ok(())
}

pub fn footprint(args: &FootprintArgs) -> Result<()> {
    let f = match (&args.checkpoint, &args.arch) {
        (Some(p), None) => memory_footprint(&load_checkpoint(p)?)?,
        (None, Some(a)) => {
            let sizes: Vec<usize> = parse_list(a, "--arch")?;
            if sizes.len() < 2 || sizes.contains(&0) {
                return Err(Error::Config("--arch needs at least two nonzero sizes".into()));
            }
            let levels = match args.dq.as_str() {
                "none" => None,
                "full" => Some(None),
                n => Some(Some(
                    n.parse::<u32>()
                        .ok()
                        .filter(|&l| l > 0)
                        .ok_or_else(|| Error::Config(format!("--dq `{n}`: expected a level count, full or none")))?,
                )),
            };
            architecture_footprint(&sizes, QuantSpec::parse(&args.wq)?.effective_bits()?, levels)
        }
        _ => return Err(Error::Config("give exactly one of --checkpoint or --arch".into())),
    };
    print_footprint(&f);
    Ok(())
}
