//! `mpc`: dataset preparation, training, evaluation and inference for
//! missing-part point cloud completion.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mpc_core::geometry::{read_cloud, write_cloud, write_labeled, SamplingMethod};
use mpc_core::models::checks::gradcheck_suite;
use mpc_core::seed::{self, stream};
use mpc_core::training::{
    self, generate_toy_dataset, prepare_dataset, sample_sizes, Dataset, Split, TrainConfig, TrainError, Trainer,
};

use config::UsageError;

#[derive(Parser)]
#[command(name = "mpc", version, about = "Point cloud completion by predicting the missing part")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample every mesh in a manifest into normalized point clouds.
    Prepare {
        /// Directory holding `manifest.csv` (path,category,split) and the meshes.
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = training::DATASET_POINTS)]
        n_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a procedural dataset of spheres, boxes, cylinders and tori.
    Toydata {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        shapes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes checkpoint.ckpt, train_log.csv and config.txt.
    #[command(allow_negative_numbers = true)]
    Train(TrainArgs),
    /// Per-category Chamfer errors of a trained model.
    Eval {
        #[command(flatten)]
        common: EvalArgs,
        #[arg(long, default_value_t = 0.35)]
        radius: f64,
        /// Output CSV.
        #[arg(long, default_value = "eval.csv")]
        out: PathBuf,
    },
    /// Mean errors over a sweep of missing-region radii.
    Robustness {
        #[command(flatten)]
        common: EvalArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.3,0.35,0.4,0.45,0.5,0.55")]
        radii: Vec<f64>,
        #[arg(long, default_value = "robustness.csv")]
        out: PathBuf,
        #[arg(long, default_value = "robustness.svg")]
        svg: PathBuf,
    },
    /// Errors with and without the refinement displacement.
    Ablate {
        #[command(flatten)]
        common: EvalArgs,
        #[arg(long, default_value_t = 0.35)]
        radius: f64,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Complete one partial cloud; writes missing, merged and refined clouds.
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Partial cloud (`.xyz` text or `.bin`); larger clouds are subsampled.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Extension of the written clouds: xyz or bin.
        #[arg(long, default_value = "xyz")]
        format: String,
        /// Defaults to the method the model was trained with.
        #[arg(long)]
        sampling_method: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference checks of every layer and both pipelines.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset `manifest.csv`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Defaults to the method the model was trained with.
    #[arg(long)]
    sampling_method: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Every training key is a flag of the same name.
#[derive(Args)]
struct TrainArgs {
    /// Dataset `manifest.csv`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from the checkpoint in `out_dir`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long = "batch_size", alias = "batch-size")]
    batch_size: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    #[arg(long)]
    decoder: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "sampling_method", alias = "sampling-method")]
    sampling_method: Option<String>,
    #[arg(long = "checkpoint_every", alias = "checkpoint-every")]
    checkpoint_every: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long = "emd_eps", alias = "emd-eps")]
    emd_eps: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let flags = [
            &self.lr,
            &self.epochs,
            &self.batch_size,
            &self.radius,
            &self.decoder,
            &self.mu,
            &self.seed,
            &self.sampling_method,
            &self.checkpoint_every,
            &self.clip,
            &self.emd_eps,
            &self.model,
        ];
        TrainConfig::KEYS
            .iter()
            .zip(flags)
            .filter_map(|(k, v)| v.as_ref().map(|v| (*k, v.clone())))
            .collect()
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|e: TrainError| usage(e.to_string()))
}

fn parse_method(s: &str) -> Result<SamplingMethod> {
    s.parse().map_err(|e: mpc_core::geometry::GeometryError| usage(e.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Model from a checkpoint plus the evaluation inputs shared by `eval`,
/// `robustness` and `ablate`.
struct EvalSetup {
    trainer: Trainer,
    dataset: Dataset,
    split: Split,
    method: SamplingMethod,
    seed: u64,
}

fn eval_setup(a: &EvalArgs) -> Result<EvalSetup> {
    let split = parse_split(&a.split)?;
    let trainer = Trainer::load(&a.checkpoint, None).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let method = match &a.sampling_method {
        Some(m) => parse_method(m)?,
        None => trainer.config.sampling_method,
    };
    let dataset = Dataset::load(&a.dataset, a.seed).with_context(|| format!("loading {}", a.dataset.display()))?;
    Ok(EvalSetup { trainer, dataset, split, method, seed: a.seed })
}

fn train(a: &TrainArgs) -> Result<()> {
    let config = config::resolve(a.config.as_deref(), &a.overrides())?;
    let dataset = Dataset::load(&a.dataset, config.seed).with_context(|| format!("loading {}", a.dataset.display()))?;
    let ckpt = Trainer::checkpoint_path(&a.out_dir);
    let mut trainer = if a.resume {
        if !ckpt.exists() {
            return Err(usage(format!("--resume: no checkpoint at {}", ckpt.display())));
        }
        Trainer::load(&ckpt, Some(config))?
    } else {
        if ckpt.exists() || a.out_dir.join("train_log.csv").exists() {
            return Err(usage(format!(
                "{} already holds a run; pass --resume or choose another directory",
                a.out_dir.display()
            )));
        }
        Trainer::new(config)?
    };
    write_file(&a.out_dir.join("config.txt"), &config::render(&trainer.config))?;
    log::info!(
        "training {} parameters from epoch {} to {}",
        trainer.model.parameter_count(),
        trainer.epochs_done(),
        trainer.config.epochs
    );
    trainer.fit(&dataset, Some(&a.out_dir))?;
    if trainer.epochs_done() > 0 && !ckpt.exists() {
        trainer.save(&ckpt)?;
    }
    Ok(())
}

fn complete(
    checkpoint: &Path,
    input: &Path,
    out_dir: &Path,
    format: &str,
    method: Option<&str>,
    seed: u64,
) -> Result<()> {
    if !matches!(format, "xyz" | "bin") {
        return Err(usage(format!("--format must be xyz or bin, got {format:?}")));
    }
    let mut trainer = Trainer::load(checkpoint, None).with_context(|| format!("loading {}", checkpoint.display()))?;
    let method = match method {
        Some(m) => parse_method(m)?,
        None => trainer.config.sampling_method,
    };
    let cloud = read_cloud(input).with_context(|| format!("reading {}", input.display()))?;
    let need = sample_sizes(trainer.model.config()).partial;
    let partial = match cloud.len() {
        n if n < need => bail!("{} has {n} points; the model needs at least {need}", input.display()),
        n if n == need => cloud,
        _ => method.sample(&cloud, need, seed::derive_seed(seed, &[stream::SAMPLE]))?.0,
    };
    let (missing, merged, refined) =
        trainer.model.complete(&partial, method, seed::derive_seed(seed, &[stream::STEP]))?;
    fs::create_dir_all(out_dir)?;
    write_cloud(out_dir.join(format!("missing.{format}")), &missing)?;
    write_labeled(out_dir.join(format!("merged.{format}")), &merged)?;
    write_cloud(out_dir.join(format!("refined.{format}")), &refined)?;
    println!("missing {} / merged {} / refined {} points -> {}", missing.len(), merged.points.len(), refined.len(), out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Prepare { data_dir, out_dir, n_points, seed } => {
            let summary = prepare_dataset(&data_dir, &out_dir, n_points, seed)?;
            for (cat, (train, test)) in &summary.counts {
                println!("{cat}: {train} train, {test} test");
            }
            if !summary.skipped.is_empty() {
                println!("skipped {} unreadable meshes", summary.skipped.len());
            }
        }
        Command::Toydata { out_dir, shapes, seed } => {
            if shapes == 0 {
                return Err(usage("--shapes must be at least 1"));
            }
            let manifest = generate_toy_dataset(shapes, seed).save(&out_dir)?;
            println!("{}", manifest.display());
        }
        Command::Train(a) => train(&a)?,
        Command::Eval { common, radius, out } => {
            let mut s = eval_setup(&common)?;
            let evals = training::evaluate(&mut s.trainer.model, &s.dataset, s.split, radius, s.method, s.seed)?;
            write_file(&out, &report::eval_csv(&evals)?)?;
        }
        Command::Robustness { common, radii, out, svg } => {
            let mut s = eval_setup(&common)?;
            let rows = training::robustness(&mut s.trainer.model, &s.dataset, s.split, &radii, s.method, s.seed)?;
            write_file(&out, &report::robustness_csv(&rows)?)?;
            write_file(&svg, &report::robustness_svg(&rows))?;
        }
        Command::Ablate { common, radius, out } => {
            let mut s = eval_setup(&common)?;
            let rows = training::ablate(&mut s.trainer.model, &s.dataset, s.split, radius, s.method, s.seed)?;
            write_file(&out, &report::ablation_csv(&rows)?)?;
        }
        Command::Complete { checkpoint, input, out_dir, format, sampling_method, seed } => {
            complete(&checkpoint, &input, &out_dir, &format, sampling_method.as_deref(), seed)?
        }
        Command::Gradcheck { seed } => {
            let results = gradcheck_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!(
                    "{status:<4} {:<28} max rel error {:.3e} (tolerance {:.0e}, {} entries, {} on kinks) worst {}",
                    r.report.name,
                    r.report.max_rel_error,
                    r.tolerance,
                    r.report.checked,
                    r.report.skipped,
                    r.report.worst
                );
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                eprintln!("{failed} of {} gradient checks failed", results.len());
                return Ok(ExitCode::from(3));
            }
            println!("all {} gradient checks passed", results.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// 1 for usage and configuration problems, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>() || matches!(e.downcast_ref::<TrainError>(), Some(TrainError::Config(_)))
    });
    if usage {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
