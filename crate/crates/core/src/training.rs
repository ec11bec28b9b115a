//! Training regimes: normal training, vanilla adversarial training, and
//! hybrid adversarial training.
//!
//! All three share one loss-graph builder so their degeneracies are exact:
//! the hybrid loss with `alpha = 0` takes literally the normal-training code
//! path, and vanilla adversarial training with a zero budget reduces to it
//! numerically. Perturbations are treated as constants in the backward pass;
//! gradients never flow through the attack's own optimization.

use crate::attack::{obsatk, AttackConfig};
use crate::corpus::ImagePatch;
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::graph::{Graph, NodeId};
use crate::model::{self, ArchConfig, ModelParams};
use crate::noise::{sample_noise, NoiseSpec};
use crate::parallel::parallel_map;
use crate::rng::{derive_seed, domain, Rng};
use crate::tensor::Tensor;

/// Which loss drives the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Normal training on non-adversarial noise.
    Nt,
    /// Vanilla adversarial training: only attacked observations.
    Vat,
    /// Hybrid adversarial training: clean-reconstruction term plus an
    /// adversarial-consistency term, weighted by `alpha`.
    Hat,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nt" => Ok(TrainMode::Nt),
            "vat" => Ok(TrainMode::Vat),
            "hat" => Ok(TrainMode::Hat),
            other => Err(Error::InvalidArgument(format!(
                "unknown training mode {other:?}, expected nt | vat | hat"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Nt => "nt",
            TrainMode::Vat => "vat",
            TrainMode::Hat => "hat",
        })
    }
}

/// Full training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub arch: ArchConfig,
    /// Highest training noise level; sigma is drawn uniformly from
    /// `[0, eps]` per patch, fresh every epoch.
    pub eps: f64,
    /// Trade-off coefficient of the hybrid loss.
    pub alpha: f64,
    /// Training-time attack budget, per pixel (`rho / sqrt(m)`).
    pub attack_rho_per_pixel: f64,
    /// Training-time attack iterations.
    pub attack_iters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Noise level of the fixed held-out validation observations.
    pub val_sigma: f64,
    /// Fraction of the corpus held out for validation PSNR.
    pub val_fraction: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Nt,
            arch: ArchConfig::default(),
            eps: 25.0 / 255.0,
            alpha: 1.0,
            attack_rho_per_pixel: 5.0 / 255.0,
            attack_iters: 1,
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            val_sigma: 15.0 / 255.0,
            val_fraction: 0.125,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::InvalidArgument(format!(
                "eps must lie in [0, 1], got {}",
                self.eps
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and nonnegative, got {}",
                self.alpha
            )));
        }
        if !(self.attack_rho_per_pixel >= 0.0) {
            return Err(Error::InvalidArgument(
                "attack budget must be nonnegative".into(),
            ));
        }
        if self.attack_iters < 1 || self.epochs < 1 || self.batch_size < 1 || self.threads < 1 {
            return Err(Error::InvalidArgument(
                "attack_iters, epochs, batch_size, and threads must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(
                "val_fraction must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.val_sigma) {
            return Err(Error::InvalidArgument("val_sigma must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub val_psnr: f64,
    pub seconds: f64,
}

/// Per-epoch training history plus the fixed noisy-input baseline PSNR of
/// the validation fold.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    pub noisy_val_psnr: f64,
}

impl TrainLog {
    /// CSV with columns `epoch,loss,psnr_val,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,psnr_val,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.8e},{:.4},{:.3}\n",
                r.epoch, r.loss, r.val_psnr, r.seconds
            ));
        }
        out
    }
}

enum LossKind<'a> {
    Nt,
    Vat(&'a AttackConfig),
    Hat(&'a AttackConfig, f64),
}

struct LossGraph {
    graph: Graph,
    loss: NodeId,
    param_nodes: Vec<(NodeId, NodeId)>,
}

/// Builds the loss graph for one batch of `(clean, noisy)` pairs.
///
/// For the adversarial modes the attacks run first, outside the graph, and
/// the perturbed observations enter as constants.
fn build_loss_graph(
    params: &ModelParams,
    batch: &[(Tensor, Tensor)],
    kind: &LossKind,
    threads: usize,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }

    // alpha = 0 collapses the hybrid loss onto the plain reconstruction
    // term, so it shares the normal-training path exactly and the attack is
    // skipped entirely.
    let kind = match kind {
        LossKind::Hat(_, alpha) if *alpha == 0.0 => &LossKind::Nt,
        other => other,
    };

    let adversarial: Option<Vec<Tensor>> = match kind {
        LossKind::Nt => None,
        LossKind::Vat(cfg) | LossKind::Hat(cfg, _) => Some(parallel_map(
            threads,
            batch,
            |_, (x, y)| -> Result<Tensor> {
                let res = obsatk(params, x, y, cfg)?;
                y.add(&res.delta)
            },
        )?),
    };

    let mut graph = Graph::new();
    let param_nodes = model::add_param_leaves(&mut graph, params);
    let arch = params.arch();
    let mut total: Option<NodeId> = None;

    for (i, (x, y)) in batch.iter().enumerate() {
        let x_leaf = graph.leaf(x.clone());
        let pair_loss = match kind {
            LossKind::Nt => {
                let y_leaf = graph.leaf(y.clone());
                let out = model::forward_on(&mut graph, arch, &param_nodes, y_leaf)?;
                let diff = graph.sub(out, x_leaf)?;
                graph.sq_norm(diff)?
            }
            LossKind::Vat(_) => {
                let y_adv = graph.leaf(adversarial.as_ref().unwrap()[i].clone());
                let out = model::forward_on(&mut graph, arch, &param_nodes, y_adv)?;
                let diff = graph.sub(out, x_leaf)?;
                graph.sq_norm(diff)?
            }
            LossKind::Hat(_, alpha) => {
                let y_leaf = graph.leaf(y.clone());
                let y_adv = graph.leaf(adversarial.as_ref().unwrap()[i].clone());
                let out_y = model::forward_on(&mut graph, arch, &param_nodes, y_leaf)?;
                let out_adv = model::forward_on(&mut graph, arch, &param_nodes, y_adv)?;
                let rec = graph.sub(out_y, x_leaf)?;
                let t1 = graph.sq_norm(rec)?;
                let gap = graph.sub(out_y, out_adv)?;
                let t2 = graph.sq_norm(gap)?;
                let w1 = graph.scale(t1, 1.0 / (1.0 + alpha))?;
                let w2 = graph.scale(t2, alpha / (1.0 + alpha))?;
                graph.add(w1, w2)?
            }
        };
        total = Some(match total {
            Some(acc) => graph.add(acc, pair_loss)?,
            None => pair_loss,
        });
    }

    let loss = graph.scale(total.unwrap(), 0.5 / batch.len() as f64)?;
    Ok(LossGraph {
        graph,
        loss,
        param_nodes,
    })
}

/// Mean of `1/2 ||f(y) - x||^2` over the batch.
pub fn nt_loss(params: &ModelParams, batch: &[(Tensor, Tensor)]) -> Result<f64> {
    let lg = build_loss_graph(params, batch, &LossKind::Nt, 1)?;
    Ok(lg.graph.value(lg.loss).item())
}

/// Mean of `1/2 ||f(y') - x||^2` where `y'` is the attacked observation
/// produced with the current parameters.
pub fn vat_loss(
    params: &ModelParams,
    batch: &[(Tensor, Tensor)],
    attack_cfg: &AttackConfig,
) -> Result<f64> {
    let lg = build_loss_graph(params, batch, &LossKind::Vat(attack_cfg), 1)?;
    Ok(lg.graph.value(lg.loss).item())
}

/// Hybrid loss: per pair
/// `1/2 ( 1/(1+alpha) ||f(y) - x||^2 + alpha/(1+alpha) ||f(y) - f(y')||^2 )`,
/// averaged over the batch.
pub fn hat_loss(
    params: &ModelParams,
    batch: &[(Tensor, Tensor)],
    attack_cfg: &AttackConfig,
    alpha: f64,
) -> Result<f64> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be finite and nonnegative, got {alpha}"
        )));
    }
    let lg = build_loss_graph(params, batch, &LossKind::Hat(attack_cfg, alpha), 1)?;
    Ok(lg.graph.value(lg.loss).item())
}

/// Loss value plus its gradient with respect to the flattened parameters
/// (layout of [`ModelParams::flatten`]) for one batch under the given mode.
/// Attack perturbations are constants in the backward pass.
pub fn loss_gradient(
    params: &ModelParams,
    batch: &[(Tensor, Tensor)],
    mode: TrainMode,
    attack_cfg: &AttackConfig,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let kind = match mode {
        TrainMode::Nt => LossKind::Nt,
        TrainMode::Vat => LossKind::Vat(attack_cfg),
        TrainMode::Hat => LossKind::Hat(attack_cfg, alpha),
    };
    let lg = build_loss_graph(params, batch, &kind, 1)?;
    let wrt: Vec<NodeId> = lg.param_nodes.iter().flat_map(|&(k, b)| [k, b]).collect();
    let grads = lg.graph.grad(lg.loss, &wrt)?;
    Ok((lg.graph.value(lg.loss).item(), flatten_grads(&grads)))
}

/// Adam with bias correction; the only optimizer the toolkit ships.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Cosine-decayed learning rate for epoch `e` of `total`.
fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}

fn flatten_grads(grads: &[Tensor]) -> Vec<f64> {
    let n: usize = grads.iter().map(|g| g.len()).sum();
    let mut out = Vec::with_capacity(n);
    for g in grads {
        out.extend_from_slice(g.data());
    }
    out
}

/// Trains a model on the corpus. Deterministic for a fixed config: every
/// random draw derives from `cfg.seed` through documented domain constants.
pub fn train(corpus: &[ImagePatch], cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let shape = corpus[0].clean.shape().to_vec();
    for p in corpus {
        if p.clean.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "train corpus",
                lhs: shape.clone(),
                rhs: p.clean.shape().to_vec(),
            });
        }
    }
    if shape[0] != cfg.arch.channels {
        return Err(Error::ShapeMismatch {
            op: "train channels",
            lhs: vec![cfg.arch.channels],
            rhs: shape,
        });
    }

    // Hold out the tail of the corpus for validation. A single-patch corpus
    // validates on its own training patch.
    let n = corpus.len();
    let n_val = if n >= 2 {
        ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let train_set = &corpus[..n - n_val];
    let val_set = if n_val > 0 {
        &corpus[n - n_val..]
    } else {
        corpus
    };

    // Fixed validation observations so the metric is comparable across
    // epochs.
    let mut val_rng = Rng::seed(derive_seed(cfg.seed, domain::VAL_NOISE, 0));
    let val_pairs: Vec<(Tensor, Tensor)> = val_set
        .iter()
        .map(|p| -> Result<(Tensor, Tensor)> {
            let v = sample_noise(
                NoiseSpec::GaussianFixed {
                    sigma: cfg.val_sigma,
                },
                p.clean.shape(),
                &mut val_rng,
            )?;
            let y = p.clean.add(&v)?.clamp(0.0, 1.0);
            Ok((p.clean.clone(), y))
        })
        .collect::<Result<_>>()?;
    let noisy_val_psnr = mean_psnr_of(&val_pairs)?;

    let m: usize = shape.iter().product();
    let attack_cfg = AttackConfig::per_pixel(cfg.attack_rho_per_pixel, m, cfg.attack_iters)?;

    let params0 = model::init_model(&cfg.arch, derive_seed(cfg.seed, domain::MODEL_INIT, 0))?;
    let mut flat = params0.flatten();
    let mut adam = Adam::new(flat.len());
    let mut log = TrainLog {
        rows: Vec::with_capacity(cfg.epochs),
        noisy_val_psnr,
    };

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);

        // Fresh observations each epoch: sigma ~ U(0, eps) per patch.
        let mut noise_rng = Rng::seed(derive_seed(cfg.seed, domain::TRAIN_NOISE, epoch as u64));
        let mut pairs: Vec<(Tensor, Tensor)> = train_set
            .iter()
            .map(|p| -> Result<(Tensor, Tensor)> {
                let v = sample_noise(
                    NoiseSpec::GaussianFamily { eps: cfg.eps },
                    p.clean.shape(),
                    &mut noise_rng,
                )?;
                let y = p.clean.add(&v)?.clamp(0.0, 1.0);
                Ok((p.clean.clone(), y))
            })
            .collect::<Result<_>>()?;
        let mut shuffle_rng =
            Rng::seed(derive_seed(cfg.seed, domain::TRAIN_SHUFFLE, epoch as u64));
        shuffle_rng.shuffle(&mut pairs);

        let mut loss_weighted = 0.0;
        for (step, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
            let params_now = ModelParams::from_flat(cfg.arch, &flat)?;
            let kind = match cfg.mode {
                TrainMode::Nt => LossKind::Nt,
                TrainMode::Vat => LossKind::Vat(&attack_cfg),
                TrainMode::Hat => LossKind::Hat(&attack_cfg, cfg.alpha),
            };
            let lg = build_loss_graph(&params_now, chunk, &kind, cfg.threads)?;
            let loss_value = lg.graph.value(lg.loss).item();
            if !loss_value.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            loss_weighted += loss_value * chunk.len() as f64;

            let wrt: Vec<NodeId> = lg
                .param_nodes
                .iter()
                .flat_map(|&(k, b)| [k, b])
                .collect();
            let grads = lg.graph.grad(lg.loss, &wrt)?;
            adam.step(&mut flat, &flatten_grads(&grads), lr);
        }

        let params_now = ModelParams::from_flat(cfg.arch, &flat)?;
        let val_psnrs = parallel_map(cfg.threads, &val_pairs, |_, (x, y)| {
            let xhat = model::denoise(&params_now, y)?;
            psnr(&xhat, x, 1.0)
        })?;
        let val_psnr = val_psnrs.iter().sum::<f64>() / val_psnrs.len() as f64;

        log.rows.push(EpochRow {
            epoch,
            loss: loss_weighted / pairs.len() as f64,
            val_psnr,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    Ok((ModelParams::from_flat(cfg.arch, &flat)?, log))
}

fn mean_psnr_of(pairs: &[(Tensor, Tensor)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in pairs {
        total += psnr(y, x, 1.0)?;
    }
    Ok(total / pairs.len() as f64)
}
