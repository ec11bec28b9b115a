//! Clean-image corpus: procedural generation and patch sampling.
//!
//! The synthetic generator mixes oriented gradients, piecewise-constant
//! shapes, and band-limited textures, which is enough structure for a small
//! denoiser to learn from while keeping the repository free of bundled
//! datasets. Real corpora enter through [`crate::image::load_corpus_dir`]
//! plus [`sample_patches`].

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::rng::{derive_seed, domain, Rng};
use crate::tensor::Tensor;

/// A clean patch, optionally paired with a noisy observation.
#[derive(Debug, Clone)]
pub struct ImagePatch {
    pub clean: Tensor,
    pub noisy: Option<Tensor>,
    /// The sigma used to produce `noisy`, when it was Gaussian.
    pub noise_sigma: Option<f64>,
}

impl ImagePatch {
    /// Wraps a clean tensor, validating the `[0, 1]` range invariant.
    pub fn new(clean: Tensor) -> Result<Self> {
        if clean.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "clean patch values must lie in [0, 1]".into(),
            ));
        }
        Ok(ImagePatch {
            clean,
            noisy: None,
            noise_sigma: None,
        })
    }

    pub fn with_noisy(mut self, noisy: Tensor, sigma: Option<f64>) -> Result<Self> {
        if noisy.shape() != self.clean.shape() {
            return Err(Error::ShapeMismatch {
                op: "image patch",
                lhs: self.clean.shape().to_vec(),
                rhs: noisy.shape().to_vec(),
            });
        }
        self.noisy = Some(noisy);
        self.noise_sigma = sigma;
        Ok(self)
    }
}

/// Generates `n` deterministic gray patches of `height x width`.
///
/// Patch `i` depends only on `(seed, i)`, so growing the corpus never
/// reshuffles existing entries.
pub fn synth_corpus(n: usize, height: usize, width: usize, seed: u64) -> Vec<ImagePatch> {
    (0..n)
        .map(|i| {
            let mut rng = Rng::seed(derive_seed(seed, domain::CORPUS, i as u64));
            let clean = synth_patch(height, width, i % 3, &mut rng);
            ImagePatch {
                clean,
                noisy: None,
                noise_sigma: None,
            }
        })
        .collect()
}

fn synth_patch(h: usize, w: usize, kind: usize, rng: &mut Rng) -> Tensor {
    let mut img = match kind {
        0 => oriented_gradient(h, w, rng),
        1 => piecewise_shapes(h, w, rng),
        _ => band_limited_texture(h, w, rng),
    };
    if kind != 2 {
        // A faint texture layer keeps gradient/shape images from being
        // trivially flat.
        let tex = band_limited_texture(h, w, rng);
        for (v, t) in img.iter_mut().zip(&tex) {
            *v += 0.25 * (t - 0.5);
        }
    }
    let data = img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(vec![1, h, w], data).expect("synth patch shape")
}

fn oriented_gradient(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let base = rng.uniform_range(0.35, 0.65);
    let amp = rng.uniform_range(0.25, 0.5);
    let (cx, cy) = (rng.uniform_range(0.3, 0.7), rng.uniform_range(0.3, 0.7));
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / w as f64 - cx;
            let v = y as f64 / h as f64 - cy;
            out.push(base + amp * (u * ct + v * st));
        }
    }
    out
}

fn piecewise_shapes(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = vec![rng.uniform_range(0.15, 0.85); h * w];
    let shapes = 3 + rng.index(4);
    for _ in 0..shapes {
        let gray = rng.uniform_range(0.05, 0.95);
        if rng.uniform() < 0.5 {
            let rw = (rng.uniform_range(0.2, 0.55) * w as f64) as usize;
            let rh = (rng.uniform_range(0.2, 0.55) * h as f64) as usize;
            let x0 = rng.index(w.saturating_sub(rw).max(1));
            let y0 = rng.index(h.saturating_sub(rh).max(1));
            for y in y0..(y0 + rh).min(h) {
                for x in x0..(x0 + rw).min(w) {
                    out[y * w + x] = gray;
                }
            }
        } else {
            let r = rng.uniform_range(0.1, 0.3) * h.min(w) as f64;
            let cx = rng.uniform_range(0.0, w as f64);
            let cy = rng.uniform_range(0.0, h as f64);
            for y in 0..h {
                for x in 0..w {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    if dx * dx + dy * dy <= r * r {
                        out[y * w + x] = gray;
                    }
                }
            }
        }
    }
    out
}

fn band_limited_texture(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.uniform_range(0.04, 0.12),
                rng.uniform_range(0.5, 3.5),
                rng.uniform_range(0.5, 3.5),
                rng.uniform_range(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / w as f64;
            let v = y as f64 / h as f64;
            let mut acc = 0.5;
            for &(a, fx, fy, phi) in &waves {
                acc += a * (std::f64::consts::TAU * (fx * u + fy * v) + phi).sin();
            }
            out.push(acc);
        }
    }
    out
}

/// Crops `count` random `size x size` patches out of larger source images.
pub fn sample_patches(
    images: &[Tensor],
    count: usize,
    size: usize,
    rng: &mut Rng,
) -> Result<Vec<ImagePatch>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no source images".into()));
    }
    for img in images {
        let s = img.shape();
        if s.len() != 3 || s[1] < size || s[2] < size {
            return Err(Error::InvalidArgument(format!(
                "source image {s:?} smaller than patch size {size}"
            )));
        }
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let img = &images[rng.index(images.len())];
        let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
        let y0 = rng.index(h - size + 1);
        let x0 = rng.index(w - size + 1);
        let mut data = Vec::with_capacity(c * size * size);
        for ch in 0..c {
            for y in 0..size {
                let row = (ch * h + y0 + y) * w + x0;
                data.extend_from_slice(&img.data()[row..row + size]);
            }
        }
        out.push(ImagePatch::new(Tensor::new(vec![c, size, size], data)?)?);
    }
    Ok(out)
}

/// Attaches a clipped noisy observation `clip(x + v, 0, 1)` to each patch,
/// drawing `v` from `spec`. Used by the CLI and tests; training resamples its
/// own noise every epoch.
pub fn corrupt_patches(
    patches: &[ImagePatch],
    spec: NoiseSpec,
    rng: &mut Rng,
) -> Result<Vec<ImagePatch>> {
    patches
        .iter()
        .map(|p| {
            let v = crate::noise::sample_noise(spec, p.clean.shape(), rng)?;
            let noisy = p.clean.add(&v)?.clamp(0.0, 1.0);
            let sigma = match spec {
                NoiseSpec::GaussianFixed { sigma } => Some(sigma),
                _ => None,
            };
            p.clone().with_noisy(noisy, sigma)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic() {
        let a = synth_corpus(6, 16, 16, 42);
        let b = synth_corpus(6, 16, 16, 42);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.clean.bit_eq(&y.clean));
        }
        let c = synth_corpus(6, 16, 16, 43);
        assert!(a.iter().zip(&c).any(|(x, y)| !x.clean.bit_eq(&y.clean)));
    }

    #[test]
    fn corpus_prefix_stable_under_growth() {
        let small = synth_corpus(4, 16, 16, 7);
        let large = synth_corpus(8, 16, 16, 7);
        for (a, b) in small.iter().zip(&large) {
            assert!(a.clean.bit_eq(&b.clean));
        }
    }

    #[test]
    fn corpus_values_in_unit_range() {
        for p in synth_corpus(12, 24, 24, 1) {
            assert!(p.clean.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn corpus_pixel_std_in_expected_band() {
        let corpus = synth_corpus(32, 32, 32, 5);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut n = 0usize;
        for p in &corpus {
            for &v in p.clean.data() {
                sum += v;
                sumsq += v * v;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!((0.1..=0.4).contains(&std), "corpus std {std}");
    }

    #[test]
    fn patch_sampler_respects_bounds_and_range() {
        let images = vec![synth_corpus(1, 48, 40, 3).remove(0).clean];
        let mut rng = Rng::seed(4);
        let patches = sample_patches(&images, 20, 16, &mut rng).unwrap();
        assert_eq!(patches.len(), 20);
        for p in &patches {
            assert_eq!(p.clean.shape(), &[1, 16, 16]);
            assert!(p.clean.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn patch_sampler_rejects_small_sources() {
        let images = vec![Tensor::zeros(&[1, 8, 8])];
        let mut rng = Rng::seed(4);
        assert!(sample_patches(&images, 1, 16, &mut rng).is_err());
    }

    #[test]
    fn image_patch_validates_range() {
        assert!(ImagePatch::new(Tensor::full(&[1, 2, 2], 1.5)).is_err());
        assert!(ImagePatch::new(Tensor::full(&[1, 2, 2], 0.5)).is_ok());
    }
}
