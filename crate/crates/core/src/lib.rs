//! Adversarial robustness toolkit for convolutional image denoisers.
//!
//! The crate covers the full loop at desk scale: a dense-tensor gradient
//! engine, a small residual denoiser, noise samplers and a procedural
//! corpus, the zero-mean/L2-ball projection with an independent Dykstra
//! oracle, the observation attack built on it, three training regimes
//! (normal, vanilla adversarial, hybrid adversarial), and a PSNR evaluation
//! harness producing CSV/JSON reports.

pub mod attack;
pub mod conv;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod image;
pub mod model;
pub mod noise;
pub mod parallel;
pub mod projection;
pub mod rng;
pub mod tensor;
pub mod tol;
pub mod training;

pub use attack::{adv_objective, budget_split, obsatk, AttackConfig, AttackResult, StepRule};
pub use corpus::{sample_patches, synth_corpus, ImagePatch};
pub use error::{Error, Result};
pub use eval::{ablation_sweep, evaluate, psnr, Column, EvalProtocol, EvalReport, SweepAxis};
pub use graph::{gradcheck, Graph, NodeId};
pub use model::{denoise, init_model, load_checkpoint, save_checkpoint, ArchConfig, ModelParams};
pub use noise::{energy_density, sample_noise, NoiseSpec};
pub use projection::{
    dykstra_project, dykstra_project_default, project_feasible, project_l2_ball,
    project_zero_mean, PerturbationBudget,
};
pub use rng::Rng;
pub use tensor::Tensor;
pub use training::{hat_loss, nt_loss, train, vat_loss, TrainConfig, TrainLog, TrainMode};
