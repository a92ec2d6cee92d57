//! `constrdyn`: generate datasets, train models, evaluate energy drift and
//! tabulate results.

mod config;
mod table;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use constrdyn::constraints::ConstraintKind;
use constrdyn::evaluation::{evaluate, write_energy_csv, EvalConfig, EvalReport, Oracle, VectorField};
use constrdyn::format::{load_trajectories, save_trajectories};
use constrdyn::models::{Checkpoint, DynamicsModel};
use constrdyn::physics::{generate_dataset, Protocol, Sampler, System};
use constrdyn::training::{save_metrics, train_with, TrainConfig};

use config::{RunConfig, SEED_ENV};

/// Model name accepted by `eval` in place of a checkpoint path.
const ORACLE: &str = "oracle";

#[derive(Parser, Debug)]
#[command(name = "constrdyn", version, about = "Learn ODE dynamics with physics constraints")]
struct Cli {
    /// Worker threads for generation, training and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplerArg {
    Normal,
    Uniform,
}

impl From<SamplerArg> for Sampler {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Normal => Sampler::Normal,
            SamplerArg::Uniform => Sampler::Uniform,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset and write it as NDJSON.
    Gen {
        #[arg(long)]
        task: System,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
    },
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed and CONSTRDYN_SEED.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Roll out a model and report energy-deviation RMSEs.
    Eval {
        /// Checkpoint path, or `oracle` for the true dynamics.
        #[arg(long)]
        model: String,
        #[arg(long)]
        task: System,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "normal")]
        sampler: SamplerArg,
        /// Method name in the report; defaults to the checkpoint label.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        report: PathBuf,
        /// Also write energy against time for every rollout.
        #[arg(long)]
        energy_csv: Option<PathBuf>,
    },
    /// Tabulate evaluation reports: rows are methods, columns are tasks.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("cannot start worker pool")?;
    match cli.command {
        Command::Gen {
            task,
            out,
            seed,
            n_traj,
            n_samples,
            sigma,
            t_end,
            sampler,
        } => {
            let mut p = Protocol::default_for(task);
            if let Some(n) = n_traj {
                p.n_traj = n;
            }
            if let Some(n) = n_samples {
                p.n_samples = n;
            }
            if let Some(s) = sigma {
                p.noise_sigma = s;
            }
            if let Some(t) = t_end {
                p.t_end = t;
            }
            if let Some(s) = sampler {
                p.sampler = s.into();
            }
            cmd_gen(task, p, seed, &out)
        }
        Command::Train { config, seed } => {
            let mut run = RunConfig::load(&config)?;
            let env = std::env::var(SEED_ENV).ok();
            run.apply_seed(seed, env.as_deref())?;
            cmd_train(&run)
        }
        Command::Eval {
            model,
            task,
            n_test,
            t_end,
            dt,
            seed,
            sampler,
            name,
            report,
            energy_csv,
        } => {
            let cfg = EvalConfig {
                n_test,
                t_end,
                dt,
                seed,
                sampler: sampler.into(),
            };
            cmd_eval(&model, task, &cfg, name, &report, energy_csv.as_deref())
        }
        Command::Report { inputs, csv } => cmd_report(&inputs, &csv),
    }
}

fn cmd_gen(task: System, protocol: Protocol, seed: u64, out: &Path) -> Result<()> {
    let data = generate_dataset(task, protocol, seed)?;
    save_trajectories(out, &data.trajectories)
        .with_context(|| format!("cannot write {}", out.display()))?;
    let back = load_trajectories(out)?;
    if back.len() != data.trajectories.len() {
        bail!("{} holds {} trajectories after writing {}", out.display(), back.len(), data.trajectories.len());
    }
    println!(
        "{task}: {} trajectories, {} samples, seed {seed} -> {}",
        data.trajectories.len(),
        data.sample_count(),
        out.display()
    );
    Ok(())
}

/// Method name of a training run, e.g. `node` or `node+hamiltonian`.
fn method_label(c: &TrainConfig) -> String {
    match c.constraint.kind {
        ConstraintKind::None => c.model_kind.to_string(),
        k => format!("{}+{k}", c.model_kind),
    }
}

fn cmd_train(run: &RunConfig) -> Result<()> {
    let trajectories = load_trajectories(&run.dataset)
        .with_context(|| format!("cannot read dataset {}", run.dataset.display()))?;
    if trajectories.is_empty() {
        bail!("dataset {} is empty", run.dataset.display());
    }
    let n = run.train.task.state_dim();
    for t in &trajectories {
        t.validate(n)
            .with_context(|| format!("dataset does not match task {}", run.train.task))?;
    }
    fs::create_dir_all(&run.out_dir)
        .with_context(|| format!("cannot create {}", run.out_dir.display()))?;
    let resolved = serde_json::to_string_pretty(&run.train)? + "\n";
    fs::write(run.out_dir.join("config.json"), resolved)?;

    let label = method_label(&run.train);
    let final_epochs = run.train.epochs;
    let out_dir = run.out_dir.clone();
    let report = train_with(&run.train, &trajectories, |m, model| {
        let ckpt = Checkpoint::from_model(model, m.epoch).with_label(label.clone());
        if m.epoch != final_epochs {
            ckpt.save(out_dir.join(format!("checkpoint_{:06}.json", m.epoch)))?;
        }
        Ok(())
    })?;
    let ckpt = Checkpoint::from_model(&report.model, report.epochs_completed).with_label(label);
    let path = run.out_dir.join("checkpoint.json");
    ckpt.save(&path)?;
    if Checkpoint::load(&path)? != ckpt {
        bail!("checkpoint {} did not read back identically", path.display());
    }
    save_metrics(run.out_dir.join("metrics.csv"), &report.metrics)?;
    let last = report.metrics.last().expect("epoch 0 row");
    if let Some(f) = &report.failure {
        bail!(
            "training diverged in epoch {}: {}; last good checkpoint (epoch {}) written to {}",
            f.epoch,
            f.message,
            report.epochs_completed,
            path.display()
        );
    }
    println!(
        "{}: {} epochs, mse {:.4e}, penalty {:.4e} -> {}",
        ckpt.label.as_deref().unwrap_or_default(),
        report.epochs_completed,
        last.mse,
        last.penalty,
        run.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(
    model: &str,
    task: System,
    cfg: &EvalConfig,
    name: Option<String>,
    report_path: &Path,
    energy_csv: Option<&Path>,
) -> Result<()> {
    let (field, default_name): (Box<dyn VectorField>, String) = if model == ORACLE {
        (Box::new(Oracle(task)), ORACLE.to_string())
    } else {
        let ckpt = Checkpoint::load(model).with_context(|| format!("cannot read checkpoint {model}"))?;
        let m: DynamicsModel = ckpt.to_model()?;
        if m.state_dim() != task.state_dim() {
            bail!(
                "checkpoint has state dimension {} but {task} needs {}",
                m.state_dim(),
                task.state_dim()
            );
        }
        let label = ckpt.label.clone().unwrap_or_else(|| ckpt.kind.to_string());
        (Box::new(m), label)
    };
    let traces = evaluate(field.as_ref(), task, cfg)?;
    let report = EvalReport::new(task, name.unwrap_or(default_name), traces.iter().map(|t| t.rmse).collect())?;
    report.save(report_path)?;
    EvalReport::load(report_path)?;
    if let Some(path) = energy_csv {
        let file = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        write_energy_csv(BufWriter::new(file), &traces)?;
    }
    println!(
        "{} on {task}: median {:.4e}, 2.5% {:.4e}, 97.5% {:.4e}, {} overflows of {}",
        report.model, report.median, report.p2_5, report.p97_5, report.overflow_count, report.n_test
    );
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], csv: &Path) -> Result<()> {
    let reports = inputs
        .iter()
        .map(|p| EvalReport::load(p).with_context(|| format!("cannot read report {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let file = fs::File::create(csv).with_context(|| format!("cannot write {}", csv.display()))?;
    table::write_table(BufWriter::new(file), &reports)?;
    println!("{} reports -> {}", reports.len(), csv.display());
    Ok(())
}
