//! Command-line front door for the denoiser robustness toolkit.
//!
//! Every run is reproducible from its config file and `--seed` alone; all
//! artifacts land under `--out` together with a manifest recording the
//! resolved settings. Exit codes: 0 success, 1 runtime failure, 2 bad
//! arguments or config.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use commands::AttackArgsResolved;
use config::ConfigSource;
use obsdn_core::{ArchConfig, Result, TrainConfig, TrainMode};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "obsdn",
    version,
    about = "Train, attack, and evaluate small convolutional image denoisers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser; writes model.obsd, train_log.csv, manifest.json
    Train(TrainArgs),
    /// Craft an adversarial perturbation for one image
    Attack(AttackArgs),
    /// Evaluate a checkpoint under the fixed-energy noise protocol
    Eval(EvalArgs),
    /// Denoise PGM/PPM images with a trained checkpoint
    Denoise(DenoiseArgs),
    /// Train one model per grid point and report the evaluation table
    Sweep(SweepArgs),
    /// Run the built-in gradient and projection verification suites
    Selftest,
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory of .pgm/.ppm images to crop patches from (default: the
    /// built-in procedural corpus)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of patches (default: 96)
    #[arg(long)]
    n_patches: Option<usize>,
    /// Square patch side in pixels (default: 32)
    #[arg(long)]
    patch_size: Option<usize>,
}

#[derive(Args)]
struct TrainHyperArgs {
    /// Training mode: nt | vat | hat (default: nt)
    #[arg(long)]
    mode: Option<String>,
    /// Convolution layers (default: 5)
    #[arg(long)]
    depth: Option<usize>,
    /// Hidden channels (default: 16)
    #[arg(long)]
    width: Option<usize>,
    /// Odd kernel size (default: 3)
    #[arg(long)]
    kernel: Option<usize>,
    /// Image channels, 1 or 3 (default: 1)
    #[arg(long)]
    channels: Option<usize>,
    /// Predict the noise residual instead of the clean image (default: true)
    #[arg(long)]
    residual: Option<bool>,
    /// Highest training noise level, "k/255" or decimal (default: 25/255)
    #[arg(long)]
    eps: Option<String>,
    /// Hybrid-loss trade-off coefficient (default: 1)
    #[arg(long)]
    alpha: Option<f64>,
    /// Training-time per-pixel attack budget (default: 5/255)
    #[arg(long)]
    attack_rho: Option<String>,
    /// Training-time attack iterations (default: 1)
    #[arg(long)]
    attack_iters: Option<usize>,
    /// Training epochs (default: 160)
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size (default: 8)
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate, cosine-decayed (default: 3e-3)
    #[arg(long)]
    lr: Option<f64>,
    /// Validation noise level (default: 15/255)
    #[arg(long)]
    val_sigma: Option<String>,
    /// Corpus fraction held out for validation (default: 0.125)
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file; CLI flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    /// Master seed; all randomness derives from it (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 by default for bit-exact runs (default: 1)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Flat key=value config file; CLI flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint (.obsd)
    #[arg(long)]
    ckpt: PathBuf,
    /// Clean reference image (PGM/PPM)
    #[arg(long)]
    image: PathBuf,
    /// Optional explicit noisy observation; otherwise base noise is
    /// synthesized at eps-hat minus the attack budget
    #[arg(long)]
    noisy: Option<PathBuf>,
    /// Total noise energy level (default: 15/255)
    #[arg(long)]
    eps_hat: Option<String>,
    /// Per-pixel attack budget rho/sqrt(m) (default: 5/255)
    #[arg(long)]
    rho: Option<String>,
    /// Attack iterations (default: 5)
    #[arg(long)]
    iters: Option<usize>,
    /// Master seed (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Flat key=value config file; CLI flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint (.obsd)
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Total noise energy level (default: 15/255)
    #[arg(long)]
    eps_hat: Option<String>,
    /// Comma-separated columns: gaussian | uniform | atk-R
    /// (default: gaussian,uniform,atk-5,atk-7)
    #[arg(long)]
    columns: Option<String>,
    /// Attack iterations for atk-* columns (default: 5)
    #[arg(long)]
    attack_iters: Option<usize>,
    /// Independent noise draws per column (default: 3)
    #[arg(long)]
    repeats: Option<usize>,
    /// Master seed (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: 1)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Trained checkpoint (.obsd)
    #[arg(long)]
    ckpt: PathBuf,
    /// Noisy input images (PGM/PPM), one output per input
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Flat key=value config file; CLI flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Swept hyperparameter: alpha | rho
    #[arg(long)]
    axis: String,
    /// Comma-separated grid values; rho values are per-pixel levels like
    /// "0,3/255,5/255", alpha values plain numbers
    #[arg(long)]
    grid: String,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    /// Total noise energy level for evaluation (default: 15/255)
    #[arg(long)]
    eps_hat: Option<String>,
    /// Evaluation columns (default: gaussian,atk-5)
    #[arg(long)]
    columns: Option<String>,
    /// Evaluation repeats (default: 3)
    #[arg(long)]
    repeats: Option<usize>,
    /// Master seed shared by every grid point (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: 1)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

enum RunError {
    /// Bad arguments or config: exit code 2.
    Config(obsdn_core::Error),
    /// Failure while executing a valid command: exit code 1.
    Runtime(obsdn_core::Error),
}

fn run(cli: Cli) -> std::result::Result<(), RunError> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, corpus_spec, settings) = resolve_train(&args).map_err(RunError::Config)?;
            let patches = commands::build_corpus(
                corpus_spec.dir.as_deref(),
                corpus_spec.n_patches,
                corpus_spec.patch_size,
                cfg.seed,
            )
            .map_err(RunError::Runtime)?;
            let outcome = commands::run_train(&args.out, &patches, &cfg, &settings)
                .map_err(RunError::Runtime)?;
            let last = outcome.log.rows.last().expect("at least one epoch");
            eprintln!(
                "trained {} epochs: loss {:.4e}, val psnr {:.2} dB (noisy input {:.2} dB)",
                outcome.log.rows.len(),
                last.loss,
                last.val_psnr,
                outcome.log.noisy_val_psnr
            );
            eprintln!("checkpoint written to {}", outcome.checkpoint.display());
            Ok(())
        }
        Command::Attack(args) => {
            let (resolved, settings) = resolve_attack(&args).map_err(RunError::Config)?;
            commands::run_attack(&args.out, &resolved, &settings).map_err(RunError::Runtime)
        }
        Command::Eval(args) => {
            let (protocol, corpus_spec, seed, threads, settings) =
                resolve_eval(&args).map_err(RunError::Config)?;
            let patches = commands::build_corpus(
                corpus_spec.dir.as_deref(),
                corpus_spec.n_patches,
                corpus_spec.patch_size,
                seed,
            )
            .map_err(RunError::Runtime)?;
            let report = commands::run_eval(
                &args.out,
                &args.ckpt,
                &patches,
                &corpus_spec.name,
                &protocol,
                seed,
                threads,
                &settings,
            )
            .map_err(RunError::Runtime)?;
            for row in &report.rows {
                eprintln!(
                    "{:<10} {:>8.3} / {:.3} dB",
                    row.column, row.psnr_mean, row.psnr_std
                );
            }
            Ok(())
        }
        Command::Denoise(args) => {
            let settings =
                BTreeMap::from([("ckpt".to_string(), args.ckpt.display().to_string())]);
            commands::run_denoise(&args.out, &args.ckpt, &args.input, &settings)
                .map_err(RunError::Runtime)
        }
        Command::Sweep(args) => {
            let resolved = resolve_sweep(&args).map_err(RunError::Config)?;
            let patches = commands::build_corpus(
                resolved.corpus.dir.as_deref(),
                resolved.corpus.n_patches,
                resolved.corpus.patch_size,
                resolved.base.seed,
            )
            .map_err(RunError::Runtime)?;
            let report = commands::run_sweep(
                &args.out,
                &patches,
                &resolved.corpus.name,
                resolved.axis,
                &resolved.grid,
                &resolved.base,
                &resolved.protocol,
                resolved.eval_seed,
                &resolved.settings,
            )
            .map_err(RunError::Runtime)?;
            for row in &report.rows {
                eprintln!(
                    "{:<24} {:<10} {:>8.3} / {:.3} dB",
                    row.corpus, row.column, row.psnr_mean, row.psnr_std
                );
            }
            Ok(())
        }
        Command::Selftest => commands::run_selftest().map_err(RunError::Runtime),
    }
}

struct CorpusSpec {
    dir: Option<PathBuf>,
    n_patches: usize,
    patch_size: usize,
    name: String,
}

fn resolve_corpus(src: &ConfigSource, args: &CorpusArgs) -> Result<CorpusSpec> {
    let dir = match &args.corpus {
        Some(d) => {
            src.raw("corpus");
            Some(d.clone())
        }
        None => src.raw("corpus").map(PathBuf::from),
    };
    let name = dir
        .as_deref()
        .and_then(|d| d.file_name().and_then(|n| n.to_str().map(String::from)))
        .unwrap_or_else(|| "synthetic".to_string());
    Ok(CorpusSpec {
        dir,
        n_patches: src.resolve(args.n_patches, "n-patches", 96)?,
        patch_size: src.resolve(args.patch_size, "patch-size", 32)?,
        name,
    })
}

fn resolve_train_hyper(
    src: &ConfigSource,
    hyper: &TrainHyperArgs,
    seed: u64,
    threads: usize,
) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let arch = ArchConfig {
        depth: src.resolve(hyper.depth, "depth", defaults.arch.depth)?,
        width: src.resolve(hyper.width, "width", defaults.arch.width)?,
        kernel: src.resolve(hyper.kernel, "kernel", defaults.arch.kernel)?,
        channels: src.resolve(hyper.channels, "channels", defaults.arch.channels)?,
        residual: src.resolve(hyper.residual, "residual", defaults.arch.residual)?,
    };
    let mode: TrainMode = match &hyper.mode {
        Some(s) => {
            src.raw("mode");
            s.parse()?
        }
        None => match src.raw("mode") {
            Some(s) => s.parse()?,
            None => defaults.mode,
        },
    };
    let cfg = TrainConfig {
        mode,
        arch,
        eps: src.resolve_level(hyper.eps.as_deref(), "eps", defaults.eps)?,
        alpha: src.resolve(hyper.alpha, "alpha", defaults.alpha)?,
        attack_rho_per_pixel: src.resolve_level(
            hyper.attack_rho.as_deref(),
            "attack-rho",
            defaults.attack_rho_per_pixel,
        )?,
        attack_iters: src.resolve(hyper.attack_iters, "attack-iters", defaults.attack_iters)?,
        epochs: src.resolve(hyper.epochs, "epochs", defaults.epochs)?,
        batch_size: src.resolve(hyper.batch_size, "batch-size", defaults.batch_size)?,
        learning_rate: src.resolve(hyper.lr, "lr", defaults.learning_rate)?,
        val_sigma: src.resolve_level(
            hyper.val_sigma.as_deref(),
            "val-sigma",
            defaults.val_sigma,
        )?,
        val_fraction: src.resolve(hyper.val_fraction, "val-fraction", defaults.val_fraction)?,
        seed,
        threads,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_settings(cfg: &TrainConfig, corpus: &CorpusSpec) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("mode".into(), cfg.mode.to_string()),
        ("depth".into(), cfg.arch.depth.to_string()),
        ("width".into(), cfg.arch.width.to_string()),
        ("kernel".into(), cfg.arch.kernel.to_string()),
        ("channels".into(), cfg.arch.channels.to_string()),
        ("residual".into(), cfg.arch.residual.to_string()),
        ("eps".into(), format!("{}", cfg.eps)),
        ("alpha".into(), format!("{}", cfg.alpha)),
        ("attack-rho".into(), format!("{}", cfg.attack_rho_per_pixel)),
        ("attack-iters".into(), cfg.attack_iters.to_string()),
        ("epochs".into(), cfg.epochs.to_string()),
        ("batch-size".into(), cfg.batch_size.to_string()),
        ("lr".into(), format!("{}", cfg.learning_rate)),
        ("val-sigma".into(), format!("{}", cfg.val_sigma)),
        ("val-fraction".into(), format!("{}", cfg.val_fraction)),
        ("threads".into(), cfg.threads.to_string()),
        (
            "corpus".into(),
            corpus
                .dir
                .as_deref()
                .map(|d| d.display().to_string())
                .unwrap_or_else(|| "synthetic".into()),
        ),
        ("n-patches".into(), corpus.n_patches.to_string()),
        ("patch-size".into(), corpus.patch_size.to_string()),
    ])
}

fn resolve_train(args: &TrainArgs) -> Result<(TrainConfig, CorpusSpec, BTreeMap<String, String>)> {
    let src = ConfigSource::load(args.config.as_deref())?;
    let seed = src.resolve(args.seed, "seed", 0)?;
    let threads = src.resolve(args.threads, "threads", 1)?;
    let cfg = resolve_train_hyper(&src, &args.hyper, seed, threads)?;
    let corpus = resolve_corpus(&src, &args.corpus)?;
    src.reject_unknown()?;
    let settings = train_settings(&cfg, &corpus);
    Ok((cfg, corpus, settings))
}

fn resolve_attack(args: &AttackArgs) -> Result<(AttackArgsResolved, BTreeMap<String, String>)> {
    let src = ConfigSource::load(args.config.as_deref())?;
    let resolved = AttackArgsResolved {
        ckpt: args.ckpt.clone(),
        image: args.image.clone(),
        noisy: args.noisy.clone(),
        eps_hat: src.resolve_level(args.eps_hat.as_deref(), "eps-hat", 15.0 / 255.0)?,
        rho_per_pixel: src.resolve_level(args.rho.as_deref(), "rho", 5.0 / 255.0)?,
        iters: src.resolve(args.iters, "iters", 5)?,
        seed: src.resolve(args.seed, "seed", 0)?,
    };
    src.reject_unknown()?;
    if resolved.rho_per_pixel > resolved.eps_hat {
        return Err(obsdn_core::Error::InvalidArgument(format!(
            "rho {} exceeds eps-hat {}",
            resolved.rho_per_pixel, resolved.eps_hat
        )));
    }
    let settings = BTreeMap::from([
        ("ckpt".into(), resolved.ckpt.display().to_string()),
        ("image".into(), resolved.image.display().to_string()),
        (
            "noisy".into(),
            resolved
                .noisy
                .as_deref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "synthesized".into()),
        ),
        ("eps-hat".into(), format!("{}", resolved.eps_hat)),
        ("rho".into(), format!("{}", resolved.rho_per_pixel)),
        ("iters".into(), resolved.iters.to_string()),
    ]);
    Ok((resolved, settings))
}

type EvalResolved = (
    obsdn_core::EvalProtocol,
    CorpusSpec,
    u64,
    usize,
    BTreeMap<String, String>,
);

fn resolve_eval(args: &EvalArgs) -> Result<EvalResolved> {
    let src = ConfigSource::load(args.config.as_deref())?;
    let protocol = commands::resolve_protocol(
        &src,
        args.eps_hat.as_deref(),
        args.columns.as_deref(),
        args.attack_iters,
        args.repeats,
    )?;
    let corpus = resolve_corpus(&src, &args.corpus)?;
    let seed = src.resolve(args.seed, "seed", 0)?;
    let threads = src.resolve(args.threads, "threads", 1)?;
    src.reject_unknown()?;
    let settings = BTreeMap::from([
        ("ckpt".into(), args.ckpt.display().to_string()),
        ("eps-hat".into(), format!("{}", protocol.eps_hat)),
        (
            "columns".into(),
            protocol
                .columns
                .iter()
                .map(|c| c.label())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("attack-iters".into(), protocol.attack_iters.to_string()),
        ("repeats".into(), protocol.repeats.to_string()),
        ("n-patches".into(), corpus.n_patches.to_string()),
        ("patch-size".into(), corpus.patch_size.to_string()),
        ("threads".into(), threads.to_string()),
    ]);
    Ok((protocol, corpus, seed, threads, settings))
}

struct SweepResolved {
    axis: obsdn_core::SweepAxis,
    grid: Vec<f64>,
    base: TrainConfig,
    corpus: CorpusSpec,
    protocol: obsdn_core::EvalProtocol,
    eval_seed: u64,
    settings: BTreeMap<String, String>,
}

fn resolve_sweep(args: &SweepArgs) -> Result<SweepResolved> {
    let src = ConfigSource::load(args.config.as_deref())?;
    let axis: obsdn_core::SweepAxis = args.axis.parse()?;
    let grid: Vec<f64> = args
        .grid
        .split(',')
        .map(|g| match axis {
            obsdn_core::SweepAxis::Alpha => g.trim().parse::<f64>().map_err(|_| {
                obsdn_core::Error::InvalidArgument(format!("bad alpha grid value {g:?}"))
            }),
            obsdn_core::SweepAxis::Rho => config::parse_level(g.trim()),
        })
        .collect::<Result<_>>()?;
    let seed = src.resolve(args.seed, "seed", 0)?;
    let threads = src.resolve(args.threads, "threads", 1)?;
    let base = resolve_train_hyper(&src, &args.hyper, seed, threads)?;
    let corpus = resolve_corpus(&src, &args.corpus)?;
    let protocol = commands::resolve_protocol(
        &src,
        args.eps_hat.as_deref(),
        args.columns.as_deref().or(Some("gaussian,atk-5")),
        None,
        args.repeats,
    )?;
    src.reject_unknown()?;
    let mut settings = train_settings(&base, &corpus);
    settings.insert("axis".into(), args.axis.clone());
    settings.insert("grid".into(), args.grid.clone());
    settings.insert("eps-hat".into(), format!("{}", protocol.eps_hat));
    Ok(SweepResolved {
        axis,
        grid,
        base,
        corpus,
        protocol,
        eval_seed: seed,
        settings,
    })
}
