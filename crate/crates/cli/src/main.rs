use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trimodal::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use trimodal::data::{gen_synthetic, read_dataset, write_dataset, DatasetDims, SynthConfig};
use trimodal::eval::{compare, run_task_suite, EvalOptions, RetrievalReport};
use trimodal::gradcheck::run_gradcheck;
use trimodal::regime::Regime;
use trimodal::train::{train, TrainConfig};

mod config;

#[derive(Parser)]
#[command(name = "trimodal", version, about = "Trimodal contrastive alignment of audio, visual and text embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train an aligner under one regime.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the seven retrieval tasks.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Evaluate several checkpoints into one table.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    clips: usize,
    #[arg(long, default_value_t = 8)]
    shared_dim: usize,
    #[arg(long, default_value_t = 4)]
    audio_dim: usize,
    #[arg(long, default_value_t = 4)]
    visual_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Global index of the first clip; disjoint ranges share mixing maps.
    #[arg(long, default_value_t = 0)]
    first_clip: usize,
    #[arg(long, default_value_t = 1)]
    captions: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    regime: Regime,
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV; defaults to the checkpoint path plus `.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Validation dataset, used for best-epoch selection when enabled.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Report JSON; an aligned text table is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Query with the first caption of each type per clip only.
    #[arg(long)]
    first_caption_only: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    ckpt: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    first_caption_only: bool,
}

fn log_config(command: &str, text: &str) {
    eprintln!("[{command}] resolved config:");
    for line in text.lines() {
        eprintln!("  {line}");
    }
}

fn table_path(out: &Path) -> PathBuf {
    out.with_extension("txt")
}

fn synth(args: SynthArgs) -> Result<()> {
    log_config("synth", &format!("{args:#?}"));
    let cfg = SynthConfig {
        n_clips: args.clips,
        shared_dim: args.shared_dim,
        audio_dim: args.audio_dim,
        visual_dim: args.visual_dim,
        noise_sigma: args.noise,
        rows_per_clip: args.rows,
        captions_per_type: args.captions,
        seed: args.seed,
        first_clip: args.first_clip,
        dims: DatasetDims::default(),
    };
    let ds = gen_synthetic(&cfg)?;
    write_dataset(&ds, &args.out)?;
    let back = read_dataset(&args.out).context("re-reading the written dataset")?;
    if back.fingerprint() != ds.fingerprint() {
        bail!("{} does not read back identically", args.out.display());
    }
    eprintln!("wrote {} clips to {} (fingerprint {})", ds.len(), args.out.display(), ds.fingerprint());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        config::apply_file(&mut cfg, path)?;
    }
    if args.validation.is_some() {
        cfg.select_on_validation = true;
    }
    let overrides = [
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("weight_decay", args.weight_decay.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("temperature", args.tau.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            config::set(&mut cfg, key, &v).with_context(|| format!("--{key}"))?;
        }
    }
    cfg.validate()?;
    log_config("train", &format!("regime={}\n{}", args.regime, cfg.to_key_values()));

    let ds = read_dataset(&args.data)?;
    let val = args.validation.as_deref().map(read_dataset).transpose()?;
    let outcome = train(&ds, &cfg, args.regime, val.as_ref())?;
    for (stage, epoch) in args.regime.stages().iter().zip(&outcome.selected_epochs) {
        eprintln!("{}: kept epoch {}", trimodal::train::stage_name(*stage), epoch + 1);
    }

    let meta = CheckpointMeta::new(&outcome.aligner, args.regime.tag(), &cfg.fingerprint());
    save_checkpoint(&outcome.aligner, &meta, &args.out)?;
    let (loaded, _) = load_checkpoint(&args.out).context("re-reading the written checkpoint")?;
    if loaded != outcome.aligner.to_f32_precision() {
        bail!("{} does not read back identically", args.out.display());
    }
    let trace = args.trace.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    fs::write(&trace, outcome.trace.to_csv()).with_context(|| format!("writing {}", trace.display()))?;
    eprintln!("wrote {} and {}", args.out.display(), trace.display());
    Ok(())
}

fn evaluate(data: &Path, ckpt: &Path, options: EvalOptions) -> Result<RetrievalReport> {
    let ds = read_dataset(data)?;
    let (aligner, meta) = load_checkpoint(ckpt)?;
    Ok(run_task_suite(&aligner, &ds, options, &meta.regime)?)
}

fn write_report(out: &Path, json: &str, table: &str) -> Result<()> {
    fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    let txt = table_path(out);
    fs::write(&txt, table).with_context(|| format!("writing {}", txt.display()))?;
    print!("{table}");
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    log_config("eval", &format!("{args:#?}"));
    let options = EvalOptions {
        k: args.k,
        all_captions: !args.first_caption_only,
    };
    let report = evaluate(&args.data, &args.ckpt, options)?;
    write_report(&args.out, &report.to_json(), &report.to_table())
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<()> {
    log_config("gradcheck", &format!("{args:#?}"));
    let report = run_gradcheck(args.trials, args.seed)?;
    let pass = report.max_error() < args.tolerance;
    println!(
        "{} trials: max relative error {:.3e} (InfoNCE {:.3e}, training step {:.3e}), tolerance {:.0e}: {}",
        report.trials,
        report.max_error(),
        report.max_error_info_nce,
        report.max_error_training,
        args.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    if !pass {
        bail!("gradient check failed");
    }
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<()> {
    log_config("compare", &format!("{args:#?}"));
    let options = EvalOptions {
        k: args.k,
        all_captions: !args.first_caption_only,
    };
    let ds = read_dataset(&args.data)?;
    let mut reports = Vec::new();
    for path in &args.ckpt {
        let (aligner, meta) = load_checkpoint(path)?;
        reports.push(run_task_suite(&aligner, &ds, options, &meta.regime)?);
    }
    let table = compare(&reports)?;
    write_report(&args.out, &table.to_json(), &table.to_table())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
