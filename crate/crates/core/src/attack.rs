//! The observation attack: projected gradient ascent on the reconstruction
//! error, constrained to zero-mean perturbations inside an L2 ball.
//!
//! Each iteration takes an ascent step on `||f(y + delta) - x||^2`, projects
//! onto the zero-mean hyperplane, then onto the `rho`-ball (in that order —
//! the composition is the exact projection onto the intersection). A single
//! pixel-range clip is applied once after the loop.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{self, ModelParams};
use crate::projection::{project_l2_ball, project_zero_mean};
use crate::tensor::Tensor;

/// Step-size rule for the ascent update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Move `eta` along the unit-normalized gradient. Makes the step length
    /// independent of the gradient's scale.
    NormalizedL2 { eta: f64 },
    /// Plain gradient step `delta += eta * g`.
    Raw { eta: f64 },
}

/// Attack configuration: budget, iteration count, step rule, pixel range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Absolute L2 budget. Callers working in per-pixel units use
    /// [`AttackConfig::per_pixel`].
    pub rho: f64,
    /// Number of ascent iterations, at least 1.
    pub iters: usize,
    pub step_rule: StepRule,
    pub p_min: f64,
    pub p_max: f64,
}

impl AttackConfig {
    /// Builds a config with the default step rule: normalized steps of
    /// `eta = 2 rho / T`, which traverses the ball diameter over the run.
    pub fn new(rho: f64, iters: usize) -> Result<Self> {
        let cfg = AttackConfig {
            rho,
            iters,
            step_rule: StepRule::NormalizedL2 {
                eta: 2.0 * rho / iters.max(1) as f64,
            },
            p_min: 0.0,
            p_max: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Budget expressed per pixel: `rho = level * sqrt(m)`.
    pub fn per_pixel(level: f64, m: usize, iters: usize) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "per-pixel budget must be finite and nonnegative, got {level}"
            )));
        }
        Self::new(level * (m as f64).sqrt(), iters)
    }

    pub fn with_step_rule(mut self, rule: StepRule) -> Result<Self> {
        self.step_rule = rule;
        self.validate()?;
        Ok(self)
    }

    pub fn with_pixel_range(mut self, p_min: f64, p_max: f64) -> Result<Self> {
        self.p_min = p_min;
        self.p_max = p_max;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "attack rho must be finite and nonnegative, got {}",
                self.rho
            )));
        }
        if self.iters < 1 {
            return Err(Error::InvalidArgument("attack needs iters >= 1".into()));
        }
        if !(self.p_min < self.p_max) {
            return Err(Error::InvalidArgument(format!(
                "pixel range [{}, {}] is empty",
                self.p_min, self.p_max
            )));
        }
        let eta = match self.step_rule {
            StepRule::NormalizedL2 { eta } | StepRule::Raw { eta } => eta,
        };
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "step size must be finite and nonnegative, got {eta}"
            )));
        }
        Ok(())
    }
}

/// Attack output. `pre_clip_delta` satisfies the zero-mean and norm
/// constraints exactly (to float tolerance); `delta` is what reaches the
/// model after the final pixel clip, which may perturb the mean.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub delta: Tensor,
    pub pre_clip_delta: Tensor,
    /// Objective value at the start of each iteration.
    pub objective_trace: Vec<f64>,
}

/// Builds the graph for `||f(y + delta) - x||^2` and returns the objective
/// node plus the delta leaf.
fn objective_graph(
    params: &ModelParams,
    y: &Tensor,
    delta: &Tensor,
    x: &Tensor,
) -> Result<(Graph, NodeId, NodeId)> {
    let mut graph = Graph::new();
    let y_leaf = graph.leaf(y.clone());
    let d_leaf = graph.leaf(delta.clone());
    let x_leaf = graph.leaf(x.clone());
    let noisy = graph.add(y_leaf, d_leaf)?;
    let param_nodes = model::add_param_leaves(&mut graph, params);
    let out = model::forward_on(&mut graph, params.arch(), &param_nodes, noisy)?;
    let diff = graph.sub(out, x_leaf)?;
    let obj = graph.sq_norm(diff)?;
    Ok((graph, obj, d_leaf))
}

/// The attack objective `||f(y + delta) - x||^2`.
pub fn adv_objective(
    params: &ModelParams,
    y: &Tensor,
    delta: &Tensor,
    x: &Tensor,
) -> Result<f64> {
    if y.shape() != x.shape() || y.shape() != delta.shape() {
        return Err(Error::ShapeMismatch {
            op: "adv_objective",
            lhs: y.shape().to_vec(),
            rhs: if y.shape() != x.shape() {
                x.shape().to_vec()
            } else {
                delta.shape().to_vec()
            },
        });
    }
    let (graph, obj, _) = objective_graph(params, y, delta, x)?;
    Ok(graph.value(obj).item())
}

/// Gradient of [`adv_objective`] with respect to `delta`, exposed for tests.
pub fn adv_objective_grad(
    params: &ModelParams,
    y: &Tensor,
    delta: &Tensor,
    x: &Tensor,
) -> Result<Tensor> {
    let (graph, obj, d_leaf) = objective_graph(params, y, delta, x)?;
    Ok(graph.grad(obj, &[d_leaf])?.remove(0))
}

/// Runs the attack on one observation.
///
/// `x` is the ground truth, `y` the noisy observation (must already lie in
/// the pixel range). The perturbation starts at zero; after `iters` projected
/// ascent steps the result is clipped once so `y + delta` stays a valid
/// image. Because `y` is in range, the element-wise clip can only shrink
/// entries of `delta`, so the norm bound survives clipping; the zero mean may
/// be perturbed, which is why both deltas are returned.
pub fn obsatk(
    params: &ModelParams,
    x: &Tensor,
    y: &Tensor,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if y.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "obsatk",
            lhs: y.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    if y.data()
        .iter()
        .any(|&v| v < cfg.p_min || v > cfg.p_max)
    {
        return Err(Error::InvalidArgument(format!(
            "observation outside pixel range [{}, {}]",
            cfg.p_min, cfg.p_max
        )));
    }

    let mut delta = Tensor::zeros(y.shape());
    let mut trace = Vec::with_capacity(cfg.iters);

    for iteration in 0..cfg.iters {
        let (graph, obj, d_leaf) = objective_graph(params, y, &delta, x)?;
        let value = graph.value(obj).item();
        if !value.is_finite() {
            return Err(Error::AttackDiverged { iteration });
        }
        trace.push(value);

        let grad = graph.grad(obj, &[d_leaf])?.remove(0);
        let stepped = match cfg.step_rule {
            StepRule::NormalizedL2 { eta } => {
                let norm = grad.l2_norm();
                if norm > 0.0 {
                    delta.add(&grad.scale(eta / norm))?
                } else {
                    delta
                }
            }
            StepRule::Raw { eta } => delta.add(&grad.scale(eta))?,
        };
        delta = project_l2_ball(&project_zero_mean(&stepped), cfg.rho)?;
    }

    let clipped = y.add(&delta)?.clamp(cfg.p_min, cfg.p_max);
    let post_clip = clipped.sub(y)?;
    Ok(AttackResult {
        delta: post_clip,
        pre_clip_delta: delta,
        objective_trace: trace,
    })
}

/// Splits the evaluation energy budget: base Gaussian noise gets
/// `sigma = eps_hat - rho/sqrt(m)`, so base noise plus a `rho`-bounded
/// perturbation keeps the total noise norm within `eps_hat * sqrt(m)`.
pub fn budget_split(eps_hat: f64, rho_over_sqrt_m: f64) -> Result<f64> {
    if !eps_hat.is_finite() || !(eps_hat >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_hat must be finite and nonnegative, got {eps_hat}"
        )));
    }
    if !(0.0..=eps_hat).contains(&rho_over_sqrt_m) {
        return Err(Error::InvalidArgument(format!(
            "per-pixel budget {rho_over_sqrt_m} must lie in [0, {eps_hat}]"
        )));
    }
    Ok(eps_hat - rho_over_sqrt_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gradcheck;
    use crate::model::{init_model, ArchConfig, ModelParams};
    use crate::tol;

    fn mid_gray_pair() -> (Tensor, Tensor) {
        // y - x is zero-mean with norm 0.1, both well inside [0, 1].
        let h = 0.1 / 2f64.sqrt();
        let x = Tensor::new(vec![1, 1, 2], vec![0.5 - h, 0.5 + h]).unwrap();
        let y = Tensor::full(&[1, 1, 2], 0.5);
        (x, y)
    }

    #[test]
    fn identity_denoiser_objective_is_noise_energy() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let (x, y) = mid_gray_pair();
        let zero = Tensor::zeros(x.shape());
        let obj = adv_objective(&params, &y, &zero, &x).unwrap();
        let v = y.sub(&x).unwrap();
        assert!((obj - v.sq_norm()).abs() < 1e-15);
    }

    #[test]
    fn perfect_reconstruction_objective_is_zero() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let y = Tensor::full(&[1, 2, 2], 0.25);
        let delta = Tensor::zeros(&[1, 2, 2]);
        // Identity denoiser, x == y + delta.
        let obj = adv_objective(&params, &y, &delta, &y).unwrap();
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn objective_gradient_passes_gradcheck() {
        let arch = ArchConfig {
            depth: 3,
            width: 4,
            ..ArchConfig::default()
        };
        let params = init_model(&arch, 3).unwrap();
        let x = crate::corpus::synth_corpus(1, 8, 8, 10).remove(0).clean;
        let y = crate::corpus::synth_corpus(1, 8, 8, 11).remove(0).clean;
        let delta = Tensor::full(&[1, 8, 8], 0.01);
        let (graph, obj, d_leaf) = objective_graph(&params, &y, &delta, &x).unwrap();
        let err = gradcheck(&graph, obj, d_leaf, crate::graph::GRADCHECK_EPS).unwrap();
        assert!(err < tol::GRADCHECK_PRIMITIVE, "err {err}");
    }

    #[test]
    fn zero_budget_returns_zero_delta_and_flat_trace() {
        let params = init_model(&ArchConfig::default(), 1).unwrap();
        let (x, y) = mid_gray_pair();
        let cfg = AttackConfig::new(0.0, 4).unwrap();
        let res = obsatk(&params, &x, &y, &cfg).unwrap();
        assert!(res.delta.inf_norm() == 0.0);
        assert!(res.pre_clip_delta.inf_norm() == 0.0);
        assert_eq!(res.objective_trace.len(), 4);
        let first = res.objective_trace[0];
        assert!(res.objective_trace.iter().all(|&v| v == first));
    }

    #[test]
    fn constraints_hold_on_pre_clip_delta() {
        let arch = ArchConfig {
            depth: 3,
            width: 4,
            ..ArchConfig::default()
        };
        let params = init_model(&arch, 5).unwrap();
        let x = crate::corpus::synth_corpus(1, 12, 12, 20).remove(0).clean;
        let mut rng = crate::rng::Rng::seed(21);
        let v = crate::noise::sample_noise(
            crate::noise::NoiseSpec::GaussianFixed { sigma: 10.0 / 255.0 },
            x.shape(),
            &mut rng,
        )
        .unwrap();
        let y = x.add(&v).unwrap().clamp(0.0, 1.0);
        let cfg = AttackConfig::per_pixel(5.0 / 255.0, x.len(), 5).unwrap();
        let res = obsatk(&params, &x, &y, &cfg).unwrap();

        let d = &res.pre_clip_delta;
        assert!(d.mean().abs() < tol::ATTACK_MEAN_ABS * cfg.rho.max(1.0));
        assert!(d.l2_norm() <= cfg.rho * (1.0 + tol::ATTACK_NORM_REL));
        // Clipping only shrinks individual entries, so the norm bound holds
        // for the post-clip delta too.
        assert!(res.delta.l2_norm() <= cfg.rho * (1.0 + tol::ATTACK_NORM_REL));
        for (post, pre) in res.delta.data().iter().zip(d.data()) {
            assert!(post.abs() <= pre.abs() + 1e-15);
        }
    }

    #[test]
    fn identity_denoiser_attack_grows_objective_to_budget() {
        // With the identity denoiser the ascent direction is y + d - x, so a
        // single normalized step saturates the ball and the objective becomes
        // (||v|| + rho)^2.
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let (x, y) = mid_gray_pair();
        let rho = 0.05;
        let cfg = AttackConfig::new(rho, 1).unwrap();
        let res = obsatk(&params, &x, &y, &cfg).unwrap();
        let base = y.sub(&x).unwrap().l2_norm();
        let attacked = adv_objective(&params, &y, &res.delta, &x).unwrap();
        assert!((attacked - (base + rho) * (base + rho)).abs() < 1e-12);
        assert!(attacked > res.objective_trace[0]);
    }

    #[test]
    fn attack_is_deterministic() {
        let params = init_model(&ArchConfig::default(), 2).unwrap();
        let x = crate::corpus::synth_corpus(1, 10, 10, 30).remove(0).clean;
        let y = x.clone();
        let cfg = AttackConfig::per_pixel(5.0 / 255.0, x.len(), 3).unwrap();
        let a = obsatk(&params, &x, &y, &cfg).unwrap();
        let b = obsatk(&params, &x, &y, &cfg).unwrap();
        assert!(a.delta.bit_eq(&b.delta));
        assert!(a.pre_clip_delta.bit_eq(&b.pre_clip_delta));
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn out_of_range_observation_rejected() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let x = Tensor::full(&[1, 2, 2], 0.5);
        let y = Tensor::full(&[1, 2, 2], 1.5);
        let cfg = AttackConfig::new(0.1, 1).unwrap();
        assert!(obsatk(&params, &x, &y, &cfg).is_err());
    }

    #[test]
    fn budget_split_arithmetic() {
        let sigma = budget_split(15.0 / 255.0, 5.0 / 255.0).unwrap();
        assert!((sigma - 10.0 / 255.0).abs() < 1e-15);
        assert_eq!(budget_split(0.1, 0.0).unwrap(), 0.1);
        assert_eq!(budget_split(0.1, 0.1).unwrap(), 0.0);
        assert!(budget_split(0.1, 0.2).is_err());
    }
}
