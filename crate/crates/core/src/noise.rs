//! Noise specifications and samplers.
//!
//! Three sources cover the training and evaluation protocols: fixed-sigma
//! Gaussian noise, the Gaussian family where the level itself is drawn
//! uniformly per call, and uniform noise matched to a target energy density.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Tagged description of a noise source. All levels are in `[0, 1]` pixel
/// units (e.g. `25/255`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// i.i.d. `N(0, sigma^2)`.
    GaussianFixed { sigma: f64 },
    /// Draw `sigma ~ U(0, eps)` once per call, then i.i.d. `N(0, sigma^2)`.
    /// Expected energy density is `eps^2 / 3`.
    GaussianFamily { eps: f64 },
    /// i.i.d. `U(-sqrt(3) eps_hat, sqrt(3) eps_hat)`, variance `eps_hat^2`.
    Uniform { eps_hat: f64 },
}

impl NoiseSpec {
    /// The level parameter (`sigma`, `eps`, or `eps_hat`).
    pub fn level(&self) -> f64 {
        match *self {
            NoiseSpec::GaussianFixed { sigma } => sigma,
            NoiseSpec::GaussianFamily { eps } => eps,
            NoiseSpec::Uniform { eps_hat } => eps_hat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.level();
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise level must be finite and nonnegative, got {l}"
            )));
        }
        Ok(())
    }
}

/// Draws a noise tensor of the given shape.
pub fn sample_noise(spec: NoiseSpec, shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    spec.validate()?;
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "zero dimension in shape {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    match spec {
        NoiseSpec::GaussianFixed { sigma } => {
            rng.fill_gaussian(&mut data, sigma);
        }
        NoiseSpec::GaussianFamily { eps } => {
            let sigma = eps * rng.uniform();
            rng.fill_gaussian(&mut data, sigma);
        }
        NoiseSpec::Uniform { eps_hat } => {
            let a = 3.0_f64.sqrt() * eps_hat;
            for v in data.iter_mut() {
                *v = a * (2.0 * rng.uniform() - 1.0);
            }
        }
    }
    Tensor::new(shape.to_vec(), data)
}

/// Energy density `||v||_2^2 / m`, the per-pixel noise power.
pub fn energy_density(v: &Tensor) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(
            "energy density of an empty tensor".into(),
        ));
    }
    Ok(v.sq_norm() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 1_000_000;

    #[test]
    fn zero_sigma_gives_zero_noise() {
        let mut rng = Rng::seed(1);
        let t = sample_noise(NoiseSpec::GaussianFixed { sigma: 0.0 }, &[64], &mut rng).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_density_zero_and_constant_cases() {
        assert_eq!(energy_density(&Tensor::zeros(&[10])).unwrap(), 0.0);
        let c = Tensor::full(&[8], 0.3);
        assert!((energy_density(&c).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn uniform_variance_matches_level() {
        // Var(U(-a, a)) = a^2/3 with a = sqrt(3) eps_hat, so the energy
        // density converges to eps_hat^2.
        let eps_hat = 25.0 / 255.0;
        let mut rng = Rng::seed(2);
        let t = sample_noise(NoiseSpec::Uniform { eps_hat }, &[N], &mut rng).unwrap();
        let density = energy_density(&t).unwrap();
        assert!(
            (density - eps_hat * eps_hat).abs() < 0.02 * eps_hat * eps_hat,
            "density {density}, target {}",
            eps_hat * eps_hat
        );
    }

    #[test]
    fn gaussian_mean_within_clt_bound() {
        let sigma = 25.0 / 255.0;
        let mut rng = Rng::seed(3);
        let t = sample_noise(NoiseSpec::GaussianFixed { sigma }, &[N], &mut rng).unwrap();
        let mean = t.mean();
        assert!(mean.abs() < 3.0 * sigma / (N as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn gaussian_energy_density_matches_sigma_squared() {
        let sigma = 25.0 / 255.0;
        let mut rng = Rng::seed(4);
        let t = sample_noise(NoiseSpec::GaussianFixed { sigma }, &[N], &mut rng).unwrap();
        let density = energy_density(&t).unwrap();
        assert!(
            (density - sigma * sigma).abs() < 0.02 * sigma * sigma,
            "density {density}"
        );
    }

    #[test]
    fn family_energy_density_stays_below_eps_squared() {
        // E[sigma^2] = eps^2/3 for sigma ~ U(0, eps); check the empirical
        // density over many draws stays within 3 standard errors.
        let eps = 25.0 / 255.0;
        let mut rng = Rng::seed(5);
        let draws = 2000;
        let per_draw = 512;
        let mut total = 0.0;
        for _ in 0..draws {
            let t =
                sample_noise(NoiseSpec::GaussianFamily { eps }, &[per_draw], &mut rng).unwrap();
            total += energy_density(&t).unwrap();
        }
        let mean_density = total / draws as f64;
        let target = eps * eps / 3.0;
        // Var of per-draw density is dominated by the sigma^2 spread:
        // Var(sigma^2) = eps^4 (1/5 - 1/9).
        let se = (eps.powi(4) * (1.0 / 5.0 - 1.0 / 9.0) / draws as f64).sqrt();
        assert!(
            (mean_density - target).abs() < 3.0 * se,
            "mean density {mean_density}, target {target}, se {se}"
        );
        assert!(mean_density < eps * eps);
    }

    #[test]
    fn negative_level_rejected() {
        let mut rng = Rng::seed(6);
        assert!(sample_noise(NoiseSpec::GaussianFixed { sigma: -0.1 }, &[4], &mut rng).is_err());
    }

    #[test]
    fn samplers_are_seed_deterministic() {
        let spec = NoiseSpec::GaussianFamily { eps: 0.1 };
        let a = sample_noise(spec, &[32], &mut Rng::seed(9)).unwrap();
        let b = sample_noise(spec, &[32], &mut Rng::seed(9)).unwrap();
        assert!(a.bit_eq(&b));
    }
}
