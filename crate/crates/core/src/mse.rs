//! Per-denoiser MSE estimation: ground-truth oracle, patch-wise aggregation,
//! Monte-Carlo divergence SURE, and an external-file plug-in so offline
//! estimators (e.g. a learned one) can feed the same pipeline.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{mse_between, EstimateSet, Image};

/// Default patch edge length for patch-wise aggregation.
pub const DEFAULT_PATCH: usize = 64;

/// Default finite-difference step for the Monte-Carlo divergence probe,
/// relative to the unit dynamic range.
pub const DEFAULT_SURE_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseMethod {
    Oracle,
    McSure,
    External,
}

impl MseMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MseMethod::Oracle => "oracle",
            MseMethod::McSure => "mc_sure",
            MseMethod::External => "external",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MseReport {
    /// Estimated per-pixel MSE for each of the K denoisers. Oracle entries
    /// are nonnegative by construction; SURE entries may go negative and are
    /// passed through unclamped.
    pub per_denoiser: Vec<f64>,
    /// Optional K x M per-patch MSEs (row k = denoiser k).
    pub per_patch: Option<Vec<Vec<f64>>>,
    /// Pixel count of each of the M patches; trailing partial patches carry
    /// their true (smaller) count.
    pub patch_counts: Option<Vec<usize>>,
    pub method: MseMethod,
    pub patch_size: usize,
}

impl MseReport {
    fn check_finite(&self) -> Result<()> {
        if self.per_denoiser.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite MSE estimate".into()));
        }
        Ok(())
    }
}

/// Ground-truth MSE of every estimate in the set.
pub fn oracle_mse(set: &EstimateSet, clean: &Image) -> Result<MseReport> {
    let per_denoiser: Vec<f64> = set
        .estimates()
        .iter()
        .map(|e| mse_between(e, clean))
        .collect::<Result<_>>()?;
    let report = MseReport {
        per_denoiser,
        per_patch: None,
        patch_counts: None,
        method: MseMethod::Oracle,
        patch_size: DEFAULT_PATCH,
    };
    report.check_finite()?;
    Ok(report)
}

/// Pixel index ranges of the non-overlapping `patch x patch` tiling of a
/// `width x height` image; trailing partial tiles are kept.
fn patch_grid(width: usize, height: usize, patch: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut tiles = Vec::new();
    let mut y = 0;
    while y < height {
        let h = patch.min(height - y);
        let mut x = 0;
        while x < width {
            let w = patch.min(width - x);
            tiles.push((x, y, w, h));
            x += patch;
        }
        y += patch;
    }
    tiles
}

fn patch_sq_err(a: &Image, b: &Image, tile: (usize, usize, usize, usize)) -> f64 {
    let (x0, y0, w, h) = tile;
    let mut s = 0.0;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let d = a.get(x, y) - b.get(x, y);
            s += d * d;
        }
    }
    s
}

/// Patch-wise oracle MSE: per-patch values plus the pixel-count-weighted
/// aggregate, which equals the whole-image MSE exactly.
pub fn patch_aggregate(set: &EstimateSet, clean: &Image, patch: usize) -> Result<MseReport> {
    if patch == 0 {
        return Err(Error::InvalidParameter("patch size must be >= 1".into()));
    }
    if patch > clean.width() && patch > clean.height() {
        return Err(Error::InvalidParameter(format!(
            "patch {patch} larger than image {}x{}",
            clean.width(),
            clean.height()
        )));
    }
    if !set.source_noisy().same_shape(clean) {
        return Err(Error::ShapeMismatch("clean image shape differs from estimates".into()));
    }
    let tiles = patch_grid(clean.width(), clean.height(), patch);
    let counts: Vec<usize> = tiles.iter().map(|&(_, _, w, h)| w * h).collect();
    let total: usize = counts.iter().sum();

    let mut per_patch = Vec::with_capacity(set.k());
    let mut per_denoiser = Vec::with_capacity(set.k());
    for e in set.estimates() {
        let sq: Vec<f64> = tiles.iter().map(|&t| patch_sq_err(e, clean, t)).collect();
        let agg: f64 = sq.iter().sum::<f64>() / total as f64;
        per_patch.push(sq.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect());
        per_denoiser.push(agg);
    }
    let report = MseReport {
        per_denoiser,
        per_patch: Some(per_patch),
        patch_counts: Some(counts),
        method: MseMethod::Oracle,
        patch_size: patch,
    };
    report.check_finite()?;
    Ok(report)
}

/// Monte-Carlo SURE with a single Rademacher divergence probe:
/// `||y - D(y)||^2/N - sigma^2 + (2 sigma^2 / N) * div`, where
/// `div = b^T (D(y + eps b) - D(y)) / eps`.
///
/// Unbiased for i.i.d. Gaussian noise without clipping; under clipped noise
/// the estimate degrades with sigma. `sigma` and `epsilon` are on the unit
/// dynamic range.
pub fn mc_sure<F>(
    denoiser: F,
    noisy: &Image,
    sigma: f64,
    epsilon: f64,
    probe_seed: u64,
) -> Result<f64>
where
    F: Fn(&Image) -> Result<Image>,
{
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let n = noisy.len() as f64;
    let dy = denoiser(noisy)?;
    if !dy.same_shape(noisy) {
        return Err(Error::ShapeMismatch("denoiser changed the image shape".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let probe: Vec<f64> = (0..noisy.len())
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let perturbed_pixels: Vec<f64> = noisy
        .pixels()
        .iter()
        .zip(&probe)
        .map(|(y, b)| y + epsilon * b)
        .collect();
    let perturbed = Image::new(noisy.width(), noisy.height(), perturbed_pixels)?;
    let dyp = denoiser(&perturbed)?;
    if !dyp.same_shape(noisy) {
        return Err(Error::ShapeMismatch("denoiser changed the image shape".into()));
    }

    let divergence: f64 = probe
        .iter()
        .zip(dyp.pixels().iter().zip(dy.pixels()))
        .map(|(b, (p, q))| b * (p - q))
        .sum::<f64>()
        / epsilon;
    let residual = mse_between(noisy, &dy)?;
    let value = residual - sigma * sigma + 2.0 * sigma * sigma / n * divergence;
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite SURE value".into()));
    }
    Ok(value)
}

/// SURE estimates for a whole estimate-set worth of denoisers, one probe
/// seed per denoiser derived from `probe_seed`.
pub fn mc_sure_set<F>(
    denoisers: &[F],
    noisy: &Image,
    sigma: f64,
    epsilon: f64,
    probe_seed: u64,
) -> Result<MseReport>
where
    F: Fn(&Image) -> Result<Image>,
{
    let per_denoiser: Vec<f64> = denoisers
        .iter()
        .enumerate()
        .map(|(i, d)| mc_sure(d, noisy, sigma, epsilon, probe_seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    Ok(MseReport {
        per_denoiser,
        per_patch: None,
        patch_counts: None,
        method: MseMethod::McSure,
        patch_size: DEFAULT_PATCH,
    })
}

/// Reads K per-denoiser MSE values, one decimal per line. Blank lines and
/// `#` comments are skipped; negative values are rejected.
pub fn load_external_mse(path: &Path, k: usize) -> Result<MseReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let malformed = |reason: String| Error::Malformed {
        path: path.display().to_string(),
        reason,
    };
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| malformed(format!("line {}: not a decimal: '{line}'", lineno + 1)))?;
        if !v.is_finite() || v < 0.0 {
            return Err(malformed(format!("line {}: MSE must be finite and >= 0, got {v}", lineno + 1)));
        }
        values.push(v);
    }
    if values.len() != k {
        return Err(malformed(format!("expected {k} MSE values, found {}", values.len())));
    }
    Ok(MseReport {
        per_denoiser: values,
        per_patch: None,
        patch_counts: None,
        method: MseMethod::External,
        patch_size: DEFAULT_PATCH,
    })
}
