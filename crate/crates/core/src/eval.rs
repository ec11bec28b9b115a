//! PSNR metric and the fixed-energy evaluation protocol.
//!
//! A report row is produced per noise column at a common energy level
//! `eps_hat`: plain Gaussian noise, uniform noise of equal energy, and
//! attacked observations whose base Gaussian level is reduced so base noise
//! plus perturbation stays within the same budget. PSNR is computed per
//! image and then averaged; mean/std aggregate over repeated noise draws.

use crate::attack::{budget_split, obsatk, AttackConfig};
use crate::corpus::ImagePatch;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::noise::{sample_noise, NoiseSpec};
use crate::parallel::parallel_map;
use crate::rng::{derive_seed, domain, Rng};
use crate::tensor::Tensor;
use crate::training::{train, TrainConfig, TrainMode};

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`.
/// Identical inputs produce `+inf`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// One evaluation column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Column {
    Gaussian,
    Uniform,
    /// Attack with the given per-pixel budget `rho / sqrt(m)`.
    Atk { rho_per_pixel: f64 },
}

impl Column {
    /// Column label: `gaussian`, `uniform`, or `atk-R` with `R` the
    /// per-pixel budget numerator over 255.
    pub fn label(&self) -> String {
        match *self {
            Column::Gaussian => "gaussian".into(),
            Column::Uniform => "uniform".into(),
            Column::Atk { rho_per_pixel } => {
                let r = rho_per_pixel * 255.0;
                if (r - r.round()).abs() < 1e-9 {
                    format!("atk-{}", r.round() as i64)
                } else {
                    format!("atk-{r}")
                }
            }
        }
    }

    /// Parses a column label as produced by [`Column::label`].
    pub fn parse(s: &str) -> Result<Column> {
        match s {
            "gaussian" => Ok(Column::Gaussian),
            "uniform" => Ok(Column::Uniform),
            _ => {
                let numerator = s.strip_prefix("atk-").ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown column {s:?}, expected gaussian | uniform | atk-R"
                    ))
                })?;
                let r: f64 = numerator.parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad attack budget in column {s:?}"))
                })?;
                if !(r >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "attack budget must be nonnegative in {s:?}"
                    )));
                }
                Ok(Column::Atk {
                    rho_per_pixel: r / 255.0,
                })
            }
        }
    }
}

/// Evaluation protocol: energy level, columns, attack iterations, repeats.
#[derive(Debug, Clone)]
pub struct EvalProtocol {
    /// Test noise level; every column's noise energy density is bounded by
    /// `eps_hat^2`.
    pub eps_hat: f64,
    pub columns: Vec<Column>,
    /// Attack iterations for `atk-*` columns.
    pub attack_iters: usize,
    /// Independent noise draws per column; mean/std aggregate over these.
    pub repeats: usize,
}

impl EvalProtocol {
    pub fn new(eps_hat: f64, columns: Vec<Column>) -> Result<Self> {
        let p = EvalProtocol {
            eps_hat,
            columns,
            attack_iters: 5,
            repeats: 3,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps_hat) {
            return Err(Error::InvalidArgument(format!(
                "eps_hat must lie in [0, 1], got {}",
                self.eps_hat
            )));
        }
        if self.columns.is_empty() {
            return Err(Error::InvalidArgument("no evaluation columns".into()));
        }
        if self.attack_iters < 1 || self.repeats < 1 {
            return Err(Error::InvalidArgument(
                "attack_iters and repeats must be >= 1".into(),
            ));
        }
        for c in &self.columns {
            if let Column::Atk { rho_per_pixel } = c {
                if *rho_per_pixel > self.eps_hat {
                    return Err(Error::InvalidArgument(format!(
                        "attack budget {rho_per_pixel} exceeds eps_hat {}",
                        self.eps_hat
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One report cell: mean/std PSNR of a column at one energy level.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub corpus: String,
    pub eps_hat: f64,
    pub column: String,
    pub psnr_mean: f64,
    pub psnr_std: f64,
}

/// Complete evaluation report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// CSV with columns `corpus,eps_hat,column,psnr_mean,psnr_std`.
    /// Infinite PSNR is serialized as the string `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("corpus,eps_hat,column,psnr_mean,psnr_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.8},{},{},{}\n",
                r.corpus,
                r.eps_hat,
                r.column,
                fmt_db(r.psnr_mean),
                fmt_db(r.psnr_std)
            ));
        }
        out
    }

    /// JSON mirror of the CSV. Infinite PSNR becomes `null` with the `exact`
    /// flag set.
    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let exact = r.psnr_mean.is_infinite();
                serde_json::json!({
                    "corpus": r.corpus,
                    "eps_hat": r.eps_hat,
                    "column": r.column,
                    "psnr_mean": if exact { None } else { Some(r.psnr_mean) },
                    "psnr_std": if r.psnr_std.is_finite() { Some(r.psnr_std) } else { None },
                    "exact": exact,
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "rows": rows }))
            .expect("report serializes")
    }

    pub fn row(&self, column: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.column == column)
    }
}

/// Rescales `v` so its L2 norm does not exceed `bound`. Keeps each sample's
/// energy density within the advertised budget.
fn clip_norm(v: &Tensor, bound: f64) -> Tensor {
    let norm = v.l2_norm();
    if norm > bound {
        v.scale(bound / norm)
    } else {
        v.clone()
    }
}

/// PSNR of the denoised reconstruction for one patch under one column.
///
/// The base noise draw depends only on `seed`, not on the column, so an
/// `atk-0` column reproduces the `gaussian` column value for value.
fn eval_cell(
    params: &ModelParams,
    clean: &Tensor,
    column: Column,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::seed(seed);
    let m = clean.len();
    let sqrt_m = (m as f64).sqrt();
    let eps_hat = protocol.eps_hat;

    let (spec, norm_bound, attack) = match column {
        Column::Gaussian => (
            NoiseSpec::GaussianFixed { sigma: eps_hat },
            eps_hat * sqrt_m,
            None,
        ),
        Column::Uniform => (NoiseSpec::Uniform { eps_hat }, eps_hat * sqrt_m, None),
        Column::Atk { rho_per_pixel } => {
            let sigma = budget_split(eps_hat, rho_per_pixel)?;
            (
                NoiseSpec::GaussianFixed { sigma },
                sigma * sqrt_m,
                Some(rho_per_pixel),
            )
        }
    };

    let v = clip_norm(&sample_noise(spec, clean.shape(), &mut rng)?, norm_bound);
    let y = clean.add(&v)?.clamp(0.0, 1.0);

    let observed = match attack {
        None => y,
        Some(rho_per_pixel) => {
            let cfg = AttackConfig::per_pixel(rho_per_pixel, m, protocol.attack_iters)?;
            let res = obsatk(params, clean, &y, &cfg)?;
            let adv = y.add(&res.delta)?;
            // Total noise stays inside the energy budget: base noise was
            // clipped to (eps_hat - rho/sqrt(m)) sqrt(m) and the
            // perturbation adds at most rho.
            let total = adv.sub(clean)?.l2_norm();
            assert!(
                total <= eps_hat * sqrt_m * (1.0 + 1e-10),
                "energy budget exceeded: {total} > {}",
                eps_hat * sqrt_m
            );
            adv
        }
    };

    let xhat = model::denoise(params, &observed)?;
    psnr(&xhat, clean, 1.0)
}

/// Runs the full protocol over a corpus and assembles the report.
///
/// Each repeat uses fresh noise seeds; rows aggregate mean and population
/// standard deviation over repeats, so a single repeat reports zero std.
pub fn evaluate(
    params: &ModelParams,
    corpus: &[ImagePatch],
    corpus_name: &str,
    protocol: &EvalProtocol,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    protocol.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation corpus".into()));
    }

    let mut rows = Vec::with_capacity(protocol.columns.len());
    for &column in &protocol.columns {
        let mut per_repeat = Vec::with_capacity(protocol.repeats);
        for repeat in 0..protocol.repeats {
            let scores = parallel_map(threads, corpus, |p_idx, patch| {
                let cell_seed = derive_seed(
                    seed,
                    domain::EVAL,
                    (repeat * corpus.len() + p_idx) as u64,
                );
                eval_cell(params, &patch.clean, column, protocol, cell_seed)
            })?;
            per_repeat.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
        let mean = per_repeat.iter().sum::<f64>() / per_repeat.len() as f64;
        let var = per_repeat
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / per_repeat.len() as f64;
        rows.push(EvalRow {
            corpus: corpus_name.to_string(),
            eps_hat: protocol.eps_hat,
            column: column.label(),
            psnr_mean: mean,
            psnr_std: if mean.is_finite() { var.sqrt() } else { 0.0 },
        });
    }
    Ok(EvalReport { rows })
}

/// Which training hyperparameter an ablation sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// The hybrid-loss trade-off coefficient.
    Alpha,
    /// The training-time attack budget, per pixel.
    Rho,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "rho" => Ok(SweepAxis::Rho),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis {other:?}, expected alpha | rho"
            ))),
        }
    }
}

/// Trains one model per grid point (all sharing the base seed) and evaluates
/// each under the same protocol. Grid points are recorded in the report's
/// corpus column as `name[axis=value]`.
pub fn ablation_sweep(
    corpus: &[ImagePatch],
    corpus_name: &str,
    axis: SweepAxis,
    grid: &[f64],
    base: &TrainConfig,
    protocol: &EvalProtocol,
    eval_seed: u64,
) -> Result<EvalReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let mut report = EvalReport::default();
    for &value in grid {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::Alpha => {
                cfg.mode = TrainMode::Hat;
                cfg.alpha = value;
            }
            SweepAxis::Rho => {
                cfg.mode = TrainMode::Hat;
                cfg.attack_rho_per_pixel = value;
            }
        }
        let (params, _) = train(corpus, &cfg)?;
        let label = match axis {
            SweepAxis::Alpha => format!("{corpus_name}[alpha={value}]"),
            SweepAxis::Rho => format!("{corpus_name}[rho={}]", value * 255.0),
        };
        let section = evaluate(&params, corpus, &label, protocol, eval_seed, cfg.threads)?;
        report.rows.extend(section.rows);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, ModelParams};

    #[test]
    fn psnr_unit_values() {
        let a = Tensor::full(&[1, 10, 10], 0.5);
        let b = Tensor::full(&[1, 10, 10], 0.6);
        // Uniform difference of 0.1 -> MSE 0.01 -> 20 dB.
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-12);

        let c = Tensor::full(&[4], 0.0);
        let d = Tensor::full(&[4], 1.0);
        // MSE 1 at peak 1 -> 0 dB.
        assert!(psnr(&c, &d, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_identical_inputs_is_infinite() {
        let a = Tensor::full(&[8], 0.3);
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_symmetry_and_shift_invariance() {
        let a = Tensor::new(vec![4], vec![0.1, 0.4, 0.2, 0.8]).unwrap();
        let b = Tensor::new(vec![4], vec![0.2, 0.3, 0.25, 0.7]).unwrap();
        let ab = psnr(&a, &b, 1.0).unwrap();
        let ba = psnr(&b, &a, 1.0).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
        let shift = 0.05;
        let a2 = a.map(|v| v + shift);
        let b2 = b.map(|v| v + shift);
        let shifted = psnr(&a2, &b2, 1.0).unwrap();
        assert!((ab - shifted).abs() < 1e-9);
    }

    #[test]
    fn psnr_shape_mismatch_rejected() {
        let a = Tensor::zeros(&[4]);
        let b = Tensor::zeros(&[5]);
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn column_labels() {
        assert_eq!(Column::Gaussian.label(), "gaussian");
        assert_eq!(Column::Uniform.label(), "uniform");
        assert_eq!(
            Column::Atk {
                rho_per_pixel: 5.0 / 255.0
            }
            .label(),
            "atk-5"
        );
        assert_eq!(Column::parse("atk-7").unwrap().label(), "atk-7");
        assert!(Column::parse("bogus").is_err());
    }

    #[test]
    fn protocol_rejects_budget_above_eps_hat() {
        let p = EvalProtocol::new(
            10.0 / 255.0,
            vec![Column::Atk {
                rho_per_pixel: 15.0 / 255.0,
            }],
        );
        assert!(p.is_err());
    }

    fn flat_corpus(n: usize, side: usize) -> Vec<ImagePatch> {
        (0..n)
            .map(|_| ImagePatch::new(Tensor::full(&[1, side, side], 0.5)).unwrap())
            .collect()
    }

    #[test]
    fn identity_denoiser_gaussian_psnr_matches_sigma() {
        // On a mid-gray corpus nothing clips, so the identity denoiser's
        // PSNR converges to 20 log10(1 / eps_hat).
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let corpus = flat_corpus(6, 64);
        let eps_hat = 15.0 / 255.0;
        let protocol = EvalProtocol::new(eps_hat, vec![Column::Gaussian]).unwrap();
        let report = evaluate(&params, &corpus, "flat", &protocol, 3, 1).unwrap();
        let got = report.rows[0].psnr_mean;
        let expect = 20.0 * (1.0 / eps_hat).log10();
        assert!((got - expect).abs() < 0.3, "got {got}, expect {expect}");
    }

    #[test]
    fn atk_zero_column_equals_gaussian_column() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let corpus = flat_corpus(3, 16);
        let protocol = EvalProtocol {
            eps_hat: 15.0 / 255.0,
            columns: vec![Column::Gaussian, Column::Atk { rho_per_pixel: 0.0 }],
            attack_iters: 5,
            repeats: 2,
        };
        let report = evaluate(&params, &corpus, "flat", &protocol, 7, 1).unwrap();
        let g = report.row("gaussian").unwrap();
        let a = report.row("atk-0").unwrap();
        assert_eq!(g.psnr_mean.to_bits(), a.psnr_mean.to_bits());
        assert_eq!(g.psnr_std.to_bits(), a.psnr_std.to_bits());
    }

    #[test]
    fn report_complete_and_std_zero_iff_single_repeat() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let corpus = flat_corpus(2, 12);
        let mut protocol = EvalProtocol::new(
            10.0 / 255.0,
            vec![
                Column::Gaussian,
                Column::Uniform,
                Column::Atk {
                    rho_per_pixel: 5.0 / 255.0,
                },
            ],
        )
        .unwrap();
        protocol.repeats = 1;
        let report = evaluate(&params, &corpus, "flat", &protocol, 1, 1).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.psnr_std == 0.0));

        protocol.repeats = 3;
        let report = evaluate(&params, &corpus, "flat", &protocol, 1, 1).unwrap();
        assert!(report.rows.iter().all(|r| r.psnr_std > 0.0));
    }

    #[test]
    fn evaluation_is_deterministic_and_thread_invariant() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let corpus = flat_corpus(4, 12);
        let protocol = EvalProtocol::new(
            10.0 / 255.0,
            vec![
                Column::Gaussian,
                Column::Atk {
                    rho_per_pixel: 5.0 / 255.0,
                },
            ],
        )
        .unwrap();
        let a = evaluate(&params, &corpus, "flat", &protocol, 11, 1).unwrap();
        let b = evaluate(&params, &corpus, "flat", &protocol, 11, 4).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.psnr_mean.to_bits(), rb.psnr_mean.to_bits());
            assert_eq!(ra.psnr_std.to_bits(), rb.psnr_std.to_bits());
        }
    }

    #[test]
    fn csv_and_json_handle_infinity() {
        let report = EvalReport {
            rows: vec![EvalRow {
                corpus: "c".into(),
                eps_hat: 0.1,
                column: "gaussian".into(),
                psnr_mean: f64::INFINITY,
                psnr_std: 0.0,
            }],
        };
        let csv = report.to_csv();
        assert!(csv.contains(",inf,"), "{csv}");
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(json["rows"][0]["psnr_mean"].is_null());
        assert_eq!(json["rows"][0]["exact"], true);
    }
}
