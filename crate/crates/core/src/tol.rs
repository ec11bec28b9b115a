//! Numeric tolerance constants, kept in one place.
//!
//! Every comparison in the crate runs in 64-bit arithmetic; these bounds are
//! the contract the projection, attack, and test suites check against.

/// Post-projection mean bound, scaled by `max(1, ||delta||_inf)`.
pub const ZERO_MEAN_ABS: f64 = 1e-12;

/// Ball projection norm slack: `||out|| <= rho * (1 + BALL_NORM_REL)`.
pub const BALL_NORM_REL: f64 = 1e-12;

/// Allowed deviation between the two-step projection and the Dykstra oracle.
pub const ORACLE_MAX_DEV: f64 = 1e-8;

/// Pre-clip attack perturbation mean bound, scaled by `max(1, rho)`.
pub const ATTACK_MEAN_ABS: f64 = 1e-10;

/// Pre-clip attack perturbation norm slack.
pub const ATTACK_NORM_REL: f64 = 1e-10;

/// Default Dykstra stopping tolerance on successive iterates.
pub const DYKSTRA_TOL: f64 = 1e-12;

/// Default Dykstra iteration cap.
pub const DYKSTRA_MAX_ITERS: usize = 10_000;

/// Gradient check bound for individual primitives.
pub const GRADCHECK_PRIMITIVE: f64 = 1e-5;

/// Gradient check bound for end-to-end losses.
pub const GRADCHECK_END_TO_END: f64 = 1e-4;
