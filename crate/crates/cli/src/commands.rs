//! Implementations behind the CLI subcommands.

use crate::config::ConfigSource;
use obsdn_core::{
    attack, corpus, dykstra_project_default, evaluate, gradcheck, image, model, noise,
    project_feasible, psnr, rng, tol, training, Column, Error, EvalProtocol, EvalReport, Graph,
    ImagePatch, Result, Rng, Tensor, TrainConfig, TrainLog,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Creates the output directory and returns it.
pub fn ensure_out_dir(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}

/// Writes `manifest.json` recording the command, toolkit version, seed, and
/// every resolved setting.
pub fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    settings: &BTreeMap<String, String>,
) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": settings,
    });
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(())
}

/// Loads a corpus: PGM/PPM files cropped into patches when a directory is
/// given, the procedural generator otherwise.
pub fn build_corpus(
    dir: Option<&Path>,
    n_patches: usize,
    patch_size: usize,
    seed: u64,
) -> Result<Vec<ImagePatch>> {
    match dir {
        Some(d) => {
            let images = image::load_corpus_dir(d)?;
            let mut patch_rng = Rng::seed(rng::derive_seed(seed, rng::domain::CORPUS, 0));
            corpus::sample_patches(&images, n_patches, patch_size, &mut patch_rng)
        }
        None => Ok(corpus::synth_corpus(n_patches, patch_size, patch_size, seed)),
    }
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: TrainLog,
}

pub fn run_train(
    out: &Path,
    corpus_patches: &[ImagePatch],
    cfg: &TrainConfig,
    settings: &BTreeMap<String, String>,
) -> Result<TrainOutcome> {
    let out = ensure_out_dir(out)?;
    let (params, log) = training::train(corpus_patches, cfg)?;
    let checkpoint = out.join("model.obsd");
    model::save_checkpoint(&params, &checkpoint)?;
    std::fs::write(out.join("train_log.csv"), log.to_csv())?;
    write_manifest(&out, "train", cfg.seed, settings)?;
    Ok(TrainOutcome { checkpoint, log })
}

pub struct AttackArgsResolved {
    pub ckpt: PathBuf,
    pub image: PathBuf,
    pub noisy: Option<PathBuf>,
    pub eps_hat: f64,
    pub rho_per_pixel: f64,
    pub iters: usize,
    pub seed: u64,
}

/// Attacks one image. Without an explicit noisy observation one is
/// synthesized per the evaluation protocol: base Gaussian noise at
/// `eps_hat - rho/sqrt(m)`, norm-clipped, pixel-clipped.
pub fn run_attack(
    out: &Path,
    args: &AttackArgsResolved,
    settings: &BTreeMap<String, String>,
) -> Result<()> {
    let out = ensure_out_dir(out)?;
    let params = model::load_checkpoint(&args.ckpt)?;
    let clean = image::read_netpbm(&args.image)?;
    let m = clean.len();

    let observation = match &args.noisy {
        Some(p) => image::read_netpbm(p)?,
        None => {
            let sigma = attack::budget_split(args.eps_hat, args.rho_per_pixel)?;
            let mut noise_rng = Rng::seed(rng::derive_seed(args.seed, rng::domain::EVAL, 0));
            let v = noise::sample_noise(
                noise::NoiseSpec::GaussianFixed { sigma },
                clean.shape(),
                &mut noise_rng,
            )?;
            let bound = sigma * (m as f64).sqrt();
            let norm = v.l2_norm();
            let v = if norm > bound { v.scale(bound / norm) } else { v };
            clean.add(&v)?.clamp(0.0, 1.0)
        }
    };

    let cfg = attack::AttackConfig::per_pixel(args.rho_per_pixel, m, args.iters)?;
    let result = attack::obsatk(&params, &clean, &observation, &cfg)?;
    let adversarial = observation.add(&result.delta)?;

    image::write_netpbm(&out.join("observation.pgm"), &observation)?;
    image::write_netpbm(&out.join("adversarial.pgm"), &adversarial)?;
    // The perturbation itself, offset to mid-gray so it is viewable.
    image::write_netpbm(&out.join("delta.pgm"), &result.delta.map(|v| 0.5 + v))?;

    let mut trace = String::from("iteration,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{v:.12e}\n"));
    }
    std::fs::write(out.join("trace.csv"), trace)?;
    write_manifest(&out, "attack", args.seed, settings)?;

    let denoised_clean = model::denoise(&params, &observation)?;
    let denoised_adv = model::denoise(&params, &adversarial)?;
    eprintln!(
        "psnr before attack {:.2} dB, after attack {:.2} dB (delta norm {:.4}, budget {:.4})",
        psnr(&denoised_clean, &clean, 1.0)?,
        psnr(&denoised_adv, &clean, 1.0)?,
        result.pre_clip_delta.l2_norm(),
        cfg.rho
    );
    Ok(())
}

pub fn run_eval(
    out: &Path,
    ckpt: &Path,
    corpus_patches: &[ImagePatch],
    corpus_name: &str,
    protocol: &EvalProtocol,
    seed: u64,
    threads: usize,
    settings: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    let out = ensure_out_dir(out)?;
    let params = model::load_checkpoint(ckpt)?;
    let report = evaluate(&params, corpus_patches, corpus_name, protocol, seed, threads)?;
    std::fs::write(out.join("eval.csv"), report.to_csv())?;
    std::fs::write(out.join("eval.json"), report.to_json() + "\n")?;
    write_manifest(&out, "eval", seed, settings)?;
    Ok(report)
}

pub fn run_denoise(
    out: &Path,
    ckpt: &Path,
    inputs: &[PathBuf],
    settings: &BTreeMap<String, String>,
) -> Result<()> {
    let out = ensure_out_dir(out)?;
    let params = model::load_checkpoint(ckpt)?;
    for input in inputs {
        let noisy = image::read_netpbm(input)?;
        let denoised = model::denoise(&params, &noisy)?.clamp(0.0, 1.0);
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image");
        image::write_netpbm(&out.join(format!("{stem}_denoised.pgm")), &denoised)?;
    }
    write_manifest(&out, "denoise", 0, settings)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    out: &Path,
    corpus_patches: &[ImagePatch],
    corpus_name: &str,
    axis: obsdn_core::SweepAxis,
    grid: &[f64],
    base: &TrainConfig,
    protocol: &EvalProtocol,
    eval_seed: u64,
    settings: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    let out = ensure_out_dir(out)?;
    let report = obsdn_core::ablation_sweep(
        corpus_patches,
        corpus_name,
        axis,
        grid,
        base,
        protocol,
        eval_seed,
    )?;
    std::fs::write(out.join("sweep.csv"), report.to_csv())?;
    std::fs::write(out.join("sweep.json"), report.to_json() + "\n")?;
    write_manifest(&out, "sweep", base.seed, settings)?;
    Ok(report)
}

/// Built-in verification: gradient checks plus the projection equivalence
/// suite. Prints one line per check and fails fast on the first error.
pub fn run_selftest() -> Result<()> {
    let started = std::time::Instant::now();
    let mut check = |name: &str, ok: bool, detail: String| -> Result<()> {
        if ok {
            println!("ok   {name}{detail}");
            Ok(())
        } else {
            println!("FAIL {name}{detail}");
            Err(Error::InvalidArgument(format!("selftest failed: {name}")))
        }
    };

    // Gradient checks over the primitive compositions the model uses.
    {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0])?);
        let out = g.sq_norm(z)?;
        let err = gradcheck(&g, out, z, 1e-5)?;
        check("gradcheck quadratic", err < 1e-8, format!(" (err {err:.2e})"))?;
    }
    {
        let arch = model::ArchConfig {
            depth: 3,
            width: 4,
            ..model::ArchConfig::default()
        };
        let params = model::init_model(&arch, 11)?;
        let x = corpus::synth_corpus(1, 8, 8, 21).remove(0).clean;
        let y = corpus::synth_corpus(1, 8, 8, 22).remove(0).clean;
        let (mut graph, nodes) = model::build_denoise_graph(&params, &y)?;
        let target = graph.leaf(x);
        let diff = graph.sub(nodes.output, target)?;
        let loss = graph.sq_norm(diff)?;
        let mut worst: f64 = gradcheck(&graph, loss, nodes.input, 1e-5)?;
        for &(k, b) in &nodes.params {
            worst = worst.max(gradcheck(&graph, loss, k, 1e-5)?);
            worst = worst.max(gradcheck(&graph, loss, b, 1e-5)?);
        }
        check(
            "gradcheck conv net",
            worst < tol::GRADCHECK_PRIMITIVE,
            format!(" (worst {worst:.2e})"),
        )?;
    }

    // Projection equivalence against the Dykstra oracle.
    {
        let mut rng = Rng::seed(0x5e1f);
        let mut worst: f64 = 0.0;
        for i in 0..300 {
            let m = 2 + (i % 63);
            let delta = Tensor::new(
                vec![m],
                (0..m).map(|_| rng.uniform_range(-2.0, 2.0)).collect(),
            )?;
            let rho = rng.uniform_range(1e-3, 3.0);
            let fast = project_feasible(&delta, rho)?;
            let oracle = dykstra_project_default(&delta, rho)?;
            worst = worst.max(fast.sub(&oracle)?.inf_norm());
            let mean_ok = fast.mean().abs() <= tol::ZERO_MEAN_ABS * delta.inf_norm().max(1.0);
            let norm_ok = fast.l2_norm() <= rho * (1.0 + tol::BALL_NORM_REL);
            if !(mean_ok && norm_ok) {
                return check("projection constraints", false, format!(" (instance {i})"));
            }
        }
        check(
            "projection equivalence",
            worst < tol::ORACLE_MAX_DEV,
            format!(" (max dev {worst:.2e})"),
        )?;
    }

    // Degeneracies.
    {
        let arch = model::ArchConfig {
            depth: 2,
            width: 2,
            ..model::ArchConfig::default()
        };
        let params = model::init_model(&arch, 3)?;
        let patches = corpus::synth_corpus(2, 8, 8, 31);
        let mut noise_rng = Rng::seed(77);
        let batch: Vec<(Tensor, Tensor)> = patches
            .iter()
            .map(|p| -> Result<(Tensor, Tensor)> {
                let v = noise::sample_noise(
                    noise::NoiseSpec::GaussianFamily { eps: 25.0 / 255.0 },
                    p.clean.shape(),
                    &mut noise_rng,
                )?;
                Ok((p.clean.clone(), p.clean.add(&v)?.clamp(0.0, 1.0)))
            })
            .collect::<Result<_>>()?;
        let acfg = attack::AttackConfig::per_pixel(5.0 / 255.0, 64, 1)?;
        let hat0 = training::hat_loss(&params, &batch, &acfg, 0.0)?;
        let nt = training::nt_loss(&params, &batch)?;
        check(
            "hat(alpha=0) == nt bitwise",
            hat0.to_bits() == nt.to_bits(),
            String::new(),
        )?;
        let zero_cfg = attack::AttackConfig::new(0.0, 3)?;
        let vat0 = training::vat_loss(&params, &batch, &zero_cfg)?;
        check("vat(rho=0) == nt", vat0.to_bits() == nt.to_bits(), String::new())?;
        let res = attack::obsatk(&params, &batch[0].0, &batch[0].1, &zero_cfg)?;
        check(
            "obsatk(rho=0) is a no-op",
            res.delta.inf_norm() == 0.0,
            String::new(),
        )?;
    }

    // PSNR unit values.
    {
        let a = Tensor::full(&[1, 10, 10], 0.5);
        let b = Tensor::full(&[1, 10, 10], 0.6);
        let twenty = psnr(&a, &b, 1.0)?;
        let c = Tensor::full(&[4], 0.0);
        let d = Tensor::full(&[4], 1.0);
        let zero = psnr(&c, &d, 1.0)?;
        check(
            "psnr unit values",
            (twenty - 20.0).abs() < 1e-12 && zero.abs() < 1e-12,
            format!(" (20dB -> {twenty:.12}, 0dB -> {zero:.2e})"),
        )?;
    }

    println!("selftest passed in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Shared resolution of evaluation protocol settings.
pub fn resolve_protocol(
    src: &ConfigSource,
    eps_hat_cli: Option<&str>,
    columns_cli: Option<&str>,
    iters_cli: Option<usize>,
    repeats_cli: Option<usize>,
) -> Result<EvalProtocol> {
    let eps_hat = src.resolve_level(eps_hat_cli, "eps-hat", 15.0 / 255.0)?;
    let columns_spec = match columns_cli {
        Some(s) => {
            src.raw("columns");
            s.to_string()
        }
        None => src
            .raw("columns")
            .unwrap_or("gaussian,uniform,atk-5,atk-7")
            .to_string(),
    };
    let columns = columns_spec
        .split(',')
        .map(|c| Column::parse(c.trim()))
        .collect::<Result<Vec<_>>>()?;
    let protocol = EvalProtocol {
        eps_hat,
        columns,
        attack_iters: src.resolve(iters_cli, "attack-iters", 5)?,
        repeats: src.resolve(repeats_cli, "repeats", 3)?,
    };
    protocol.validate()?;
    Ok(protocol)
}
