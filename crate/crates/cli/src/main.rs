//! Command-line entry point: training, evaluation, benchmarking and
//! checkpoint inspection.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsvit::bench::{bench_inference, BenchOptions};
use gsvit::encoder::Encoder;
use gsvit::io::checkpoint::Checkpoint;
use gsvit::io::corpus::load_corpus;
use gsvit::io::report::Report;
use gsvit::train::loops::metrics_report;
use gsvit::train::{evaluate_phase, finetune, pretrain, train_phase, PhaseModel};
use gsvit::{Config, Error, Result};

#[derive(Parser)]
#[command(name = "gsvit", version, about = "Surgical video transformer: training, evaluation and inference benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file; defaults to the snapshot inside --checkpoint, else built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Next-frame pre-training of encoder and decoder.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Training report destination.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// One epoch over the videos of a single procedure.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        procedure: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Phase-classification head over a frozen encoder.
    TrainPhase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-video accuracy, precision and recall of a trained head.
    EvalPhase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encoder inference latency and throughput.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Encoder weights; randomly initialized from the seed when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Also run at twice the batch.
        #[arg(long)]
        paired: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint manifest.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn resolve_config(common: &Common, ckpt: Option<&Checkpoint>) -> Result<Config> {
    let mut cfg = match (&common.config, ckpt) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(c)) if !c.config.is_empty() => Config::parse(&c.config)?,
        _ => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn set_batch(slot: &mut usize, batch: Option<usize>) -> Result<()> {
    if let Some(b) = batch {
        if b == 0 {
            return Err(Error::Config("--batch must be at least 1".into()));
        }
        *slot = b;
    }
    Ok(())
}

fn emit(report: &Report, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => report.save(path),
        None => {
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn summary(report: &Report, keys: &[&str]) {
    for k in keys {
        if let Some(v) = report.get(k) {
            println!("{k} = {v}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common, corpus, out, steps, batch, report } => {
            let mut cfg = resolve_config(&common, None)?;
            set_batch(&mut cfg.pretrain.batch, batch)?;
            let steps = steps.unwrap_or(cfg.pretrain.steps);
            let corpus = load_corpus(&corpus)?;
            let (ckpt, rep) = pretrain(&corpus, &cfg, steps, cfg.seed)?;
            ckpt.save(&out)?;
            let r = rep.to_report();
            summary(&r, &["steps", "initial_loss", "final_loss"]);
            if let Some(p) = report {
                r.save(&p)?;
            }
        }
        Command::Finetune { common, checkpoint, corpus, procedure, out, batch, report } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut cfg = resolve_config(&common, Some(&ckpt))?;
            set_batch(&mut cfg.finetune.batch, batch)?;
            let corpus = load_corpus(&corpus)?;
            let (next, rep) = finetune(&ckpt, &corpus, &procedure, &cfg, cfg.seed)?;
            next.save(&out)?;
            let r = rep.to_report();
            summary(&r, &["steps", "initial_loss", "final_loss"]);
            if let Some(p) = report {
                r.save(&p)?;
            }
        }
        Command::TrainPhase { common, checkpoint, corpus, out, epochs, batch, report } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut cfg = resolve_config(&common, Some(&ckpt))?;
            set_batch(&mut cfg.train.batch, batch)?;
            let epochs = epochs.unwrap_or(cfg.train.epochs);
            let corpus = load_corpus(&corpus)?;
            let (model, rep) = train_phase(&ckpt, &corpus, &cfg, epochs, cfg.seed)?;
            model.checkpoint(&cfg).save(&out)?;
            let r = rep.to_report();
            summary(&r, &["steps", "initial_loss", "final_loss", "encoder_checksum"]);
            if let Some(p) = report {
                r.save(&p)?;
            }
        }
        Command::EvalPhase { common, checkpoint, corpus, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = resolve_config(&common, Some(&ckpt))?;
            let model = PhaseModel::from_checkpoint(&ckpt, &cfg)?;
            let corpus = load_corpus(&corpus)?;
            let metrics = evaluate_phase(&model, &corpus, cfg.head.classes)?;
            for v in &metrics.skipped {
                eprintln!("warning: video '{v}' has no phase labels; skipped");
            }
            emit(&metrics_report(&metrics, &cfg), out.as_deref())?;
        }
        Command::Bench { common, checkpoint, batch, warmup, iters, threads, paired, out } => {
            let ckpt = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let mut cfg = resolve_config(&common, ckpt.as_ref())?;
            set_batch(&mut cfg.bench.batch, batch)?;
            cfg.bench.warmup = warmup.unwrap_or(cfg.bench.warmup);
            cfg.bench.iters = iters.unwrap_or(cfg.bench.iters);
            cfg.bench.threads = threads.unwrap_or(cfg.bench.threads);
            let mut encoder = Encoder::<f32>::from_seed(&cfg.encoder, cfg.seed)?;
            if let Some(c) = &ckpt {
                c.load_module("encoder", &mut encoder)?;
            }
            let b = &cfg.bench;
            let options = BenchOptions { batch: b.batch, warmup: b.warmup, iters: b.iters, threads: b.threads };
            let report = bench_inference(&encoder, &cfg, options, paired, cfg.seed)?.to_report();
            emit(&report, out.as_deref())?;
            if out.is_some() {
                summary(&report, &["mean_ms", "std_ms", "images_per_sec", "reference.latency_ms", "reference.images_per_sec"]);
            }
        }
        Command::Inspect { checkpoint } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            print!("{}", ckpt.describe());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
