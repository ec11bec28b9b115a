//! Trains the three regimes on the synthetic corpus and prints the
//! evaluation table, mirroring what the acceptance suite checks.

use obsdn_core::{
    evaluate, synth_corpus, train, Column, EvalProtocol, TrainConfig, TrainMode,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let n_patches: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(96);
    let threads: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let learning_rate: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let batch_size: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
    let attack_iters: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1);
    let alpha: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let train_rho: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(5.0) / 255.0;
    let modes: String = args.get(9).cloned().unwrap_or_else(|| "nt,vat,hat".into());

    let corpus = synth_corpus(n_patches, 32, 32, 2024);
    let eval_corpus = synth_corpus(24, 32, 32, 4048);

    let protocol = EvalProtocol {
        eps_hat: 15.0 / 255.0,
        columns: vec![
            Column::Gaussian,
            Column::Uniform,
            Column::Atk {
                rho_per_pixel: 5.0 / 255.0,
            },
            Column::Atk {
                rho_per_pixel: 7.0 / 255.0,
            },
        ],
        attack_iters: 5,
        repeats: 3,
    };

    let mode_list: Vec<TrainMode> = modes
        .split(',')
        .map(|m| m.parse().expect("mode"))
        .collect();
    for mode in mode_list {
        let cfg = TrainConfig {
            mode,
            epochs,
            threads,
            learning_rate,
            batch_size,
            attack_iters,
            alpha,
            attack_rho_per_pixel: train_rho,
            seed: 7,
            ..TrainConfig::default()
        };
        let started = std::time::Instant::now();
        let (params, log) = train(&corpus, &cfg).expect("training");
        let train_secs = started.elapsed().as_secs_f64();
        let report = evaluate(&params, &eval_corpus, "desk", &protocol, 99, threads)
            .expect("evaluation");
        let last = log.rows.last().unwrap();
        println!(
            "== {mode} | {train_secs:.1}s | final loss {:.3e} | val psnr {:.2} (noisy {:.2})",
            last.loss, last.val_psnr, log.noisy_val_psnr
        );
        for row in log.rows.iter().step_by((epochs / 6).max(1)) {
            println!(
                "   epoch {:>3}  loss {:.3e}  val {:.2}",
                row.epoch, row.loss, row.val_psnr
            );
        }
        for row in &report.rows {
            println!("   {:<10} {:>7.3} / {:.3}", row.column, row.psnr_mean, row.psnr_std);
        }
    }
}
