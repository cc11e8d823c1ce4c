use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use jadce::container::save_complex;
use jadce::estimator::{load_params, save_params, FatDlConfig, FatDlParams, Stop};
use jadce::harness::{
    bench_complexity, point_scenario, preset, run_experiment, train_point, training_sets, write_outputs, AlgorithmSpec,
    BenchDims, ExperimentSpec, ParamSource,
};
use jadce::training::{grad_check, write_phase_log, Sample};
use jadce::JadceError;

#[derive(Parser)]
#[command(name = "jadce", version, about = "Activity detection and channel estimation experiments")]
struct Cli {
    /// Worker threads for trials and mini-batches (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Experiment spec in TOML.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Built-in desk-scale preset, e.g. fig3-desk.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the experiment's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a training dataset for the first sweep point.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples (default: the experiment's training-set size).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Layerwise training for the first trained FAT-DL entry at the first sweep point.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full sweep and write results.csv, timings.csv and plot.dat.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer timing across (L, N, r, M).
    Bench {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        layers: usize,
        #[arg(long, default_value_t = 21)]
        reps: usize,
    },
    /// Compare hand-derived gradients with central differences.
    GradCheck {
        #[command(flatten)]
        spec: SpecArgs,
        /// Parameters to check at (default: the untrained start).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        per_block: usize,
    },
    Params {
        #[command(subcommand)]
        cmd: ParamsCmd,
    },
}

#[derive(Subcommand)]
enum ParamsCmd {
    /// Print a parameter file as JSON.
    Inspect {
        #[arg(long)]
        params: PathBuf,
    },
}

fn load_spec(a: &SpecArgs) -> Result<ExperimentSpec> {
    let mut spec = match (&a.spec, &a.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentSpec::from_toml(&text)?
        }
        (None, Some(name)) => preset(name)?,
        _ => bail!(JadceError::invalid("give exactly one of --spec or --preset")),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

/// The first trained FAT-DL entry, or the first FAT-DL entry of any kind.
fn fatdl_entry(spec: &ExperimentSpec) -> Result<(usize, usize, bool)> {
    let entries: Vec<_> = spec
        .algorithms
        .iter()
        .filter_map(|a| match a {
            AlgorithmSpec::FatDl {
                outer_layers,
                inner_layers,
                em,
                params,
            } => Some((*outer_layers, *inner_layers, *em, *params == ParamSource::Trained)),
            _ => None,
        })
        .collect();
    let pick = entries.iter().find(|e| e.3).or(entries.first());
    match pick {
        Some(&(t, tau, em, _)) => {
            let t = match spec.sweep.axis {
                jadce::harness::SweepAxis::OuterLayers => spec.sweep.values.iter().cloned().fold(1.0, f64::max) as usize,
                _ => t,
            };
            Ok((t.max(1), tau, em))
        }
        None => bail!(JadceError::invalid("spec lists no FAT-DL algorithm")),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_gen(spec: &ExperimentSpec, out: &Path, samples: Option<usize>) -> Result<()> {
    let point = point_scenario(spec, spec.sweep.values[0])?;
    let mut spec = spec.clone();
    let ts = spec.training.get_or_insert_with(Default::default);
    if let Some(n) = samples {
        ts.train_size = n;
    }
    let (train, _) = training_sets(&spec, &point)?;
    let dir = out.join("samples");
    std::fs::create_dir_all(&dir)?;
    write_json(&out.join("descriptor.json"), &train.descriptor)?;
    save_complex(&out.join("pilots.jdcm"), &train.pilots)?;
    let mut activity = std::io::BufWriter::new(std::fs::File::create(out.join("activity.csv"))?);
    for (i, s) in train.samples.iter().enumerate() {
        for (tag, m) in [("v", &s.v), ("s", &s.s), ("u", &s.u), ("x", &s.x)] {
            save_complex(&dir.join(format!("{i:06}_{tag}.jdcm")), m)?;
        }
        let row: Vec<&str> = s.activity.iter().map(|&a| if a { "1" } else { "0" }).collect();
        writeln!(activity, "{}", row.join(","))?;
    }
    activity.flush()?;
    println!("wrote {} samples to {}", train.samples.len(), out.display());
    Ok(())
}

fn cmd_train(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    if spec.training.is_none() {
        bail!(JadceError::invalid("spec has no [training] section"));
    }
    let (t, tau, em) = fatdl_entry(spec)?;
    let point = point_scenario(spec, spec.sweep.values[0])?;
    let res = train_point(spec, &point, t, tau, em)?;
    std::fs::create_dir_all(out)?;
    save_params(&res.params, &out.join("params.jdcp"))?;
    std::fs::write(out.join("params.json"), res.params.to_json()?)?;
    write_phase_log(&out.join("training.jsonl"), &res.log)?;
    if let Some(rep) = &res.grad_report {
        write_json(&out.join("grad_check.json"), rep)?;
    }
    for l in &res.log {
        println!(
            "phase {:2} {:8} {:<60} val {:.4e} -> {:.4e}{}",
            l.phase,
            format!("{:?}", l.kind).to_lowercase(),
            l.label,
            l.val_initial,
            l.val_best,
            l.event.as_deref().map(|e| format!("  [{e}]")).unwrap_or_default()
        );
    }
    println!("parameters written to {}", out.join("params.jdcp").display());
    Ok(())
}

fn cmd_run(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let table = run_experiment(spec)?;
    write_outputs(out, &table)?;
    std::fs::write(out.join("spec.toml"), spec.to_toml()?)?;
    for r in &table.rows {
        println!(
            "{:>8} {:<45} aer {:.4} [{:.4}, {:.4}]  nmse {:7.2} dB  ok {} failed {}",
            r.sweep_value, r.algorithm, r.aer_median, r.aer_q1, r.aer_q3, r.nmse_db_median, r.trials_ok, r.trials_failed
        );
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn bench_grid() -> Vec<BenchDims> {
    let base = BenchDims { l: 256, n: 512, r: 8, m: 64 };
    vec![
        base,
        BenchDims { m: 32, ..base },
        BenchDims { m: 256, ..base },
        BenchDims { l: 2 * base.l, ..base },
        BenchDims { r: 2 * base.r, ..base },
        BenchDims { n: 2 * base.n, ..base },
    ]
}

fn cmd_bench(seed: u64, out: Option<&Path>, layers: usize, reps: usize) -> Result<()> {
    let rows = bench_complexity(&bench_grid(), layers, reps, seed)?;
    let mut text = String::from("L,N,r,M,per_layer_ms,reduce_ms\n");
    for r in &rows {
        text += &format!(
            "{},{},{},{},{:.4},{:.4}\n",
            r.dims.l, r.dims.n, r.dims.r, r.dims.m, r.per_layer_ms, r.reduce_ms
        );
    }
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench.csv"), text)?;
    }
    Ok(())
}

fn cmd_grad_check(spec: &ExperimentSpec, params: Option<&Path>, per_block: usize) -> Result<()> {
    let (t, tau, em) = fatdl_entry(spec)?;
    let point = point_scenario(spec, spec.sweep.values[0])?;
    let mut small = spec.clone();
    let ts = small.training.get_or_insert_with(Default::default);
    ts.train_size = 4;
    ts.val_size = 1;
    let (train, _) = training_sets(&small, &point)?;
    let s = &point.system;
    let p = match params {
        Some(path) => load_params(path)?,
        None => FatDlParams::init(t, tau, s.n_devices, s.n_mixture),
    };
    let fat = FatDlConfig {
        outer_layers: p.outer_layers,
        inner_layers: p.inner_layers,
        em,
        eps0: s.activity_prob,
        noise_var: s.noise_var,
    };
    let batch: Vec<&Sample> = train.samples.iter().collect();
    let rep = grad_check(&p, &fat, &point.pilots.entries, &batch, Stop::Outer(p.outer_layers), per_block, spec.seed)?;
    for b in &rep.blocks {
        println!("{:<14} checked {:3} max rel err {:.3e}", b.block.to_string(), b.checked, b.max_rel_err);
    }
    println!(
        "max rel err {:.3e} (tolerance {:.0e}): {}",
        rep.max_rel_err,
        rep.tolerance,
        if rep.passed { "passed" } else { "FAILED" }
    );
    if !rep.passed {
        bail!(JadceError::GradCheck(format!("max relative error {:.3e}", rep.max_rel_err)));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Cmd::Gen { spec, out, samples } => cmd_gen(&load_spec(&spec)?, &out, samples),
        Cmd::Train { spec, out } => cmd_train(&load_spec(&spec)?, &out),
        Cmd::Run { spec, out } => cmd_run(&load_spec(&spec)?, &out),
        Cmd::Bench { seed, out, layers, reps } => cmd_bench(seed, out.as_deref(), layers, reps),
        Cmd::GradCheck { spec, params, per_block } => cmd_grad_check(&load_spec(&spec)?, params.as_deref(), per_block),
        Cmd::Params {
            cmd: ParamsCmd::Inspect { params },
        } => {
            println!("{}", load_params(&params)?.to_json()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<JadceError>().map(|j| j.kind()).unwrap_or("io");
            let record = serde_json::json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
