//! Core domain types: grayscale images, the seeded Gaussian noise model,
//! denoiser estimate sets and simplex weight vectors.
//!
//! Pixels are double-precision intensities, nominally in `[0,1]`. Unclipped
//! noisy images may leave that range; quantization happens only at PGM
//! export. All types are immutable after construction and all operations are
//! pure functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// 2-D grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "pixel buffer length {} != {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pixel value".into()));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Image> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn from_fn<F: Fn(usize, usize) -> f64>(width: usize, height: usize, f: F) -> Result<Image> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copy with every pixel clamped to `[0,1]` (export convention).
    pub fn clamp_unit(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Additive i.i.d. Gaussian noise, seeded for reproducibility.
///
/// `sigma255` is the standard deviation on the `[0,255]` scale; internally
/// the noise uses `sigma255 / 255`. Variates come from ChaCha8 seeded with
/// `seed`, drawn through the ziggurat standard-normal sampler, one per pixel
/// in row-major order, so identical `(seed, shape, sigma255, clipped)` yields
/// bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma255: f64,
    pub clipped: bool,
    pub seed: u64,
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        self.sigma255 / 255.0
    }
}

/// `y = z + eta`, `eta ~ N(0, sigma^2)` per pixel; clamped to `[0,1]` when
/// the model is clipped.
pub fn add_noise(clean: &Image, model: &NoiseModel) -> Result<Image> {
    if !(model.sigma255 > 0.0) || !model.sigma255.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma255 must be positive, got {}",
            model.sigma255
        )));
    }
    let sigma = model.sigma();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let pixels = clean
        .pixels
        .iter()
        .map(|&z| {
            let eta: f64 = StandardNormal.sample(&mut rng);
            let y = z + sigma * eta;
            if model.clipped {
                y.clamp(0.0, 1.0)
            } else {
                y
            }
        })
        .collect();
    Image::new(clean.width, clean.height, pixels)
}

/// Weight vector over K estimates.
///
/// `simplex` construction enforces sum-to-one within 1e-9 and entries no more
/// negative than -1e-12. `affine` only enforces sum-to-one; the relaxed
/// closed-form solution can carry negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn simplex(w: Vec<f64>) -> Result<WeightVector> {
        let v = WeightVector::affine(w)?;
        if v.0.iter().any(|&x| x < -1e-12) {
            return Err(Error::InvalidParameter(format!(
                "negative weight below slack: {:?}",
                v.0
            )));
        }
        Ok(v)
    }

    pub fn affine(w: Vec<f64>) -> Result<WeightVector> {
        if w.is_empty() {
            return Err(Error::InvalidParameter("empty weight vector".into()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite weight".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights sum to {sum}, not 1")));
        }
        Ok(WeightVector(w))
    }

    pub fn basis(k: usize, i: usize) -> WeightVector {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        WeightVector(w)
    }

    pub fn uniform(k: usize) -> WeightVector {
        WeightVector(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Column-stacked denoiser outputs plus provenance labels.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    estimates: Vec<Image>,
    labels: Vec<String>,
    source_noisy: Image,
}

impl EstimateSet {
    pub fn new(estimates: Vec<Image>, labels: Vec<String>, source_noisy: Image) -> Result<EstimateSet> {
        if estimates.is_empty() {
            return Err(Error::InvalidParameter("estimate set needs K >= 1".into()));
        }
        if estimates.len() != labels.len() {
            return Err(Error::ShapeMismatch("labels/estimates length mismatch".into()));
        }
        for (i, e) in estimates.iter().enumerate() {
            if !e.same_shape(&source_noisy) {
                return Err(Error::ShapeMismatch(format!(
                    "estimate {i} has shape {}x{}, noisy is {}x{}",
                    e.width, e.height, source_noisy.width, source_noisy.height
                )));
            }
        }
        for i in 0..labels.len() {
            for j in (i + 1)..labels.len() {
                if labels[i] == labels[j] {
                    return Err(Error::InvalidParameter(format!(
                        "duplicate label '{}'",
                        labels[i]
                    )));
                }
            }
        }
        Ok(EstimateSet { estimates, labels, source_noisy })
    }

    pub fn k(&self) -> usize {
        self.estimates.len()
    }

    pub fn estimates(&self) -> &[Image] {
        &self.estimates
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn source_noisy(&self) -> &Image {
        &self.source_noisy
    }
}

/// Pixel-wise linear combination `sum_k w_k zhat_k`. No clamping; export
/// clamps separately.
pub fn combine_estimates(set: &EstimateSet, w: &WeightVector) -> Result<Image> {
    if w.len() != set.k() {
        return Err(Error::ShapeMismatch(format!(
            "weight vector length {} != K {}",
            w.len(),
            set.k()
        )));
    }
    let n = set.source_noisy.len();
    let mut out = vec![0.0; n];
    for (wk, est) in w.as_slice().iter().zip(&set.estimates) {
        for (o, p) in out.iter_mut().zip(est.pixels()) {
            *o += wk * p;
        }
    }
    Image::new(set.source_noisy.width, set.source_noisy.height, out)
}

/// Per-pixel mean squared difference `||a - b||^2 / N`.
pub fn mse_between(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let n = a.len() as f64;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// PSNR with peak 1.0 on normalized intensities.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Deterministic synthetic test image: a ramp, a disc and a sinusoidal
/// texture, spanning the full `[0,1]` range.
pub fn synthetic_image(width: usize, height: usize) -> Image {
    let w = width as f64;
    let h = height as f64;
    Image::from_fn(width, height, |x, y| {
        let xf = x as f64;
        let yf = y as f64;
        let ramp = xf / (w - 1.0).max(1.0);
        let cx = 0.35 * w;
        let cy = 0.40 * h;
        let r = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
        let disc = if r < 0.22 * w.min(h) { 0.8 } else { 0.0 };
        let tex = 0.15 * (0.35 * xf).sin() * (0.23 * yf).cos();
        (0.55 * ramp + disc + tex + 0.05).clamp(0.0, 1.0)
    })
    .expect("valid dimensions")
}
