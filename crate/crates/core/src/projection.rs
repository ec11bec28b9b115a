//! Projection onto the intersection of the zero-mean hyperplane and the
//! L2 ball of radius `rho`.
//!
//! The two-step projection (hyperplane first, then ball) equals the exact
//! Euclidean projection onto the intersection; [`dykstra_project`] provides an
//! independent iterative oracle for verifying that equivalence.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tol;

/// L2 perturbation budget `rho` together with the element count it applies to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBudget {
    rho: f64,
    m: usize,
}

impl PerturbationBudget {
    pub fn new(rho: f64, m: usize) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "budget rho must be finite and nonnegative, got {rho}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("budget needs m >= 1".into()));
        }
        Ok(PerturbationBudget { rho, m })
    }

    /// Builds the absolute budget from a per-pixel level: `rho = level * sqrt(m)`.
    pub fn per_pixel(level: f64, m: usize) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "per-pixel budget must be finite and nonnegative, got {level}"
            )));
        }
        Self::new(level * (m as f64).sqrt(), m)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `rho / sqrt(m)`, the per-pixel view of the budget.
    pub fn per_pixel_level(&self) -> f64 {
        self.rho / (self.m as f64).sqrt()
    }
}

/// Projects onto the zero-mean hyperplane: subtracts the mean from every
/// element, i.e. removes the component along the all-ones normal.
pub fn project_zero_mean(delta: &Tensor) -> Tensor {
    let mean = delta.mean();
    delta.map(|v| v - mean)
}

/// Projects onto the L2 ball of radius `rho`: inputs already inside are
/// returned unchanged, outside inputs are rescaled onto the boundary.
pub fn project_l2_ball(delta: &Tensor, rho: f64) -> Result<Tensor> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rho must be finite and nonnegative, got {rho}"
        )));
    }
    let norm = delta.l2_norm();
    if norm <= rho {
        Ok(delta.clone())
    } else {
        Ok(delta.scale(rho / norm))
    }
}

/// Exact projection onto the intersection of the zero-mean hyperplane and the
/// `rho`-ball: hyperplane first, then ball. The order matters; the reverse
/// composition is not the exact projection.
pub fn project_feasible(delta: &Tensor, rho: f64) -> Result<Tensor> {
    project_l2_ball(&project_zero_mean(delta), rho)
}

/// Dykstra's alternating-projection method between the hyperplane and the
/// ball, used as an independent oracle for [`project_feasible`].
///
/// Unlike plain alternating projections, Dykstra's correction terms make the
/// iterates converge to the exact projection onto the intersection. Stops
/// when successive iterates move less than `stop_tol` in the max norm and
/// errors out (carrying the last residual) if `max_iters` is exhausted.
pub fn dykstra_project(
    delta: &Tensor,
    rho: f64,
    max_iters: usize,
    stop_tol: f64,
) -> Result<Tensor> {
    if max_iters < 1 {
        return Err(Error::InvalidArgument("dykstra needs iters >= 1".into()));
    }
    if !(stop_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dykstra needs tol > 0, got {stop_tol}"
        )));
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rho must be finite and nonnegative, got {rho}"
        )));
    }

    let mut x = delta.clone();
    let mut p = Tensor::zeros(delta.shape());
    let mut q = Tensor::zeros(delta.shape());
    let mut residual = f64::INFINITY;

    for _ in 0..max_iters {
        let y = project_zero_mean(&x.add(&p)?);
        p = x.add(&p)?.sub(&y)?;
        let x_next = project_l2_ball(&y.add(&q)?, rho)?;
        q = y.add(&q)?.sub(&x_next)?;

        residual = x_next.sub(&x)?.inf_norm();
        x = x_next;
        if residual < stop_tol {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        iters: max_iters,
        residual,
    })
}

/// Convenience wrapper running Dykstra with the default budget of
/// [`tol::DYKSTRA_MAX_ITERS`] iterations and [`tol::DYKSTRA_TOL`] tolerance.
pub fn dykstra_project_default(delta: &Tensor, rho: f64) -> Result<Tensor> {
    dykstra_project(delta, rho, tol::DYKSTRA_MAX_ITERS, tol::DYKSTRA_TOL)
}
