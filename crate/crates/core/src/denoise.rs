//! Built-in deterministic denoisers and classical boosting recursions.
//!
//! The built-in filters are deliberately simple and diverse — a separable
//! Gaussian blur, a square-window median, and an 8x8 block-DCT hard
//! threshold — so that an ensemble of them has genuinely different error
//! profiles. Stronger denoisers can be plugged in as precomputed images via
//! `ExternalFile`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::pgm;

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserKind {
    GaussianBlur,
    Median,
    DctThreshold,
    ExternalFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    /// Blur standard deviation in pixels, median window side, or threshold
    /// multiple of `sigma_hat255`, depending on `kind`.
    pub strength: f64,
    /// Assumed noise level on the `[0,255]` scale, used by `DctThreshold`.
    pub sigma_hat255: f64,
}

impl DenoiserSpec {
    pub fn new(kind: DenoiserKind, strength: f64, sigma_hat255: f64) -> Result<Self> {
        match kind {
            DenoiserKind::ExternalFile(_) => {}
            DenoiserKind::DctThreshold => {
                if strength < 0.0 || !strength.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "dct_threshold strength must be >= 0, got {strength}"
                    )));
                }
                if sigma_hat255 < 0.0 || !sigma_hat255.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "sigma_hat255 must be >= 0, got {sigma_hat255}"
                    )));
                }
            }
            _ => {
                if !(strength > 0.0) || !strength.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "denoiser strength must be > 0, got {strength}"
                    )));
                }
            }
        }
        Ok(DenoiserSpec { kind, strength, sigma_hat255 })
    }

    /// Short label for reports, e.g. `blur:1.5` or `external:path.pgm`.
    pub fn label(&self) -> String {
        match &self.kind {
            DenoiserKind::GaussianBlur => format!("blur:{}", self.strength),
            DenoiserKind::Median => format!("median:{}", self.strength),
            DenoiserKind::DctThreshold => format!("dct:{}", self.strength),
            DenoiserKind::ExternalFile(p) => format!("external:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostRule {
    Twicing,
    Osher,
    CharestMilanfar,
    TalebiMilanfar,
    Sos,
}

impl BoostRule {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "twicing" => BoostRule::Twicing,
            "osher" => BoostRule::Osher,
            "charest_milanfar" => BoostRule::CharestMilanfar,
            "talebi_milanfar" => BoostRule::TalebiMilanfar,
            "sos" => BoostRule::Sos,
            other => return Err(Error::Config(format!("unknown boost rule '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoostRule::Twicing => "twicing",
            BoostRule::Osher => "osher",
            BoostRule::CharestMilanfar => "charest_milanfar",
            BoostRule::TalebiMilanfar => "talebi_milanfar",
            BoostRule::Sos => "sos",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoosterSpec {
    pub rule: BoostRule,
    pub iterations: usize,
    pub inner: DenoiserSpec,
}

impl BoosterSpec {
    pub fn new(rule: BoostRule, iterations: usize, inner: DenoiserSpec) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidParameter("booster iterations must be >= 1".into()));
        }
        Ok(BoosterSpec { rule, iterations, inner })
    }
}

/// 1-D Gaussian kernel of standard deviation `sigma`, truncated at `3 sigma`
/// and normalized.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() as isize / 2;
    // horizontal pass
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                let xi = clamp_index(x as isize + t as isize - radius, w);
                s += kv * img.get(xi, y);
            }
            tmp[y * w + x] = s;
        }
    }
    // vertical pass
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                let yi = clamp_index(y as isize + t as isize - radius, h);
                s += kv * tmp[yi * w + x];
            }
            out[y * w + x] = s;
        }
    }
    Image::new(w, h, out).expect("blur preserves shape")
}

fn median_filter(img: &Image, window: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as isize;
    let mut out = vec![0.0; w * h];
    let mut buf = Vec::with_capacity(window * window);
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    buf.push(img.get(clamp_index(x as isize + dx, w), clamp_index(y as isize + dy, h)));
                }
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out[y * w + x] = buf[buf.len() / 2];
        }
    }
    Image::new(w, h, out).expect("median preserves shape")
}

const BLOCK: usize = 8;
const STRIDE: usize = 4;

/// Orthonormal DCT-II basis for `BLOCK` points: `basis[k][n]`.
fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    let mut b = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (k, row) in b.iter_mut().enumerate() {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = scale
                * (std::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos();
        }
    }
    b
}

fn dct_threshold(img: &Image, strength: f64, sigma_hat255: f64) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    if w < BLOCK || h < BLOCK {
        return Err(Error::InvalidParameter(format!(
            "dct_threshold needs at least {BLOCK}x{BLOCK}, got {w}x{h}"
        )));
    }
    let basis = dct_basis();
    let thr = strength * sigma_hat255 / 255.0;
    let mut acc = vec![0.0; w * h];
    let mut weight = vec![0.0; w * h];

    // block origins at the given stride, always including the last full block
    let origins = |extent: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..=(extent - BLOCK)).step_by(STRIDE).collect();
        if *v.last().expect("extent >= BLOCK") != extent - BLOCK {
            v.push(extent - BLOCK);
        }
        v
    };

    let mut block = [[0.0; BLOCK]; BLOCK];
    let mut coef = [[0.0; BLOCK]; BLOCK];
    for &y0 in &origins(h) {
        for &x0 in &origins(w) {
            for (by, row) in block.iter_mut().enumerate() {
                for (bx, v) in row.iter_mut().enumerate() {
                    *v = img.get(x0 + bx, y0 + by);
                }
            }
            // forward 2-D DCT: rows then columns
            for (u, crow) in coef.iter_mut().enumerate() {
                for (v, c) in crow.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (by, row) in block.iter().enumerate() {
                        for (bx, &p) in row.iter().enumerate() {
                            s += p * basis[u][by] * basis[v][bx];
                        }
                    }
                    *c = s;
                }
            }
            // hard threshold (DC included)
            for crow in coef.iter_mut() {
                for c in crow.iter_mut() {
                    if c.abs() < thr {
                        *c = 0.0;
                    }
                }
            }
            // inverse and accumulate
            for by in 0..BLOCK {
                for bx in 0..BLOCK {
                    let mut s = 0.0;
                    for (u, crow) in coef.iter().enumerate() {
                        for (v, &c) in crow.iter().enumerate() {
                            s += c * basis[u][by] * basis[v][bx];
                        }
                    }
                    let idx = (y0 + by) * w + (x0 + bx);
                    acc[idx] += s;
                    weight[idx] += 1.0;
                }
            }
        }
    }
    let out: Vec<f64> = acc
        .iter()
        .zip(&weight)
        .map(|(a, c)| (a / c).clamp(0.0, 1.0))
        .collect();
    Image::new(w, h, out)
}

pub fn denoise(spec: &DenoiserSpec, noisy: &Image) -> Result<Image> {
    match &spec.kind {
        DenoiserKind::GaussianBlur => Ok(gaussian_blur(noisy, spec.strength)),
        DenoiserKind::Median => {
            let window = spec.strength.round() as usize;
            if window % 2 == 0 || window == 0 {
                return Err(Error::InvalidParameter(format!(
                    "median window must be odd and >= 1, got {window}"
                )));
            }
            Ok(median_filter(noisy, window))
        }
        DenoiserKind::DctThreshold => dct_threshold(noisy, spec.strength, spec.sigma_hat255),
        DenoiserKind::ExternalFile(path) => {
            let img = pgm::read_pgm(path)?;
            if !img.same_shape(noisy) {
                return Err(Error::ShapeMismatch(format!(
                    "external estimate {} is {}x{}, expected {}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    noisy.width(),
                    noisy.height()
                )));
            }
            Ok(img)
        }
    }
}

/// Convenience for ensemble members given as precomputed files.
pub fn external(path: &Path) -> DenoiserSpec {
    DenoiserSpec { kind: DenoiserKind::ExternalFile(path.to_path_buf()), strength: 1.0, sigma_hat255: 0.0 }
}

fn lincomb(a: &Image, ca: f64, b: &Image, cb: f64) -> Image {
    let px: Vec<f64> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| ca * x + cb * y)
        .collect();
    Image::new(a.width(), a.height(), px).expect("shape preserved")
}

/// Runs T steps of the selected boosting recursion starting from `initial`,
/// with `B = denoise(spec.inner, .)`. Returns the iterates `z^(1)..z^(T)`.
pub fn boost_trajectory(
    spec: &BoosterSpec,
    noisy: &Image,
    initial: &Image,
) -> Result<Vec<Image>> {
    if !noisy.same_shape(initial) {
        return Err(Error::ShapeMismatch("noisy and initial estimate shapes differ".into()));
    }
    let b = |img: &Image| denoise(&spec.inner, img);
    let mut z = initial.clone();
    // running residual sum for the Osher rule: y + sum_{i<=t} (y - z^(i)),
    // starting from plain y (the sum is empty at t = 0)
    let mut osher_arg = noisy.clone();
    let mut iterates = Vec::with_capacity(spec.iterations);
    for _ in 0..spec.iterations {
        let next = match spec.rule {
            BoostRule::Twicing | BoostRule::TalebiMilanfar => {
                let residue = lincomb(noisy, 1.0, &z, -1.0);
                lincomb(&b(&residue)?, 1.0, &z, 1.0)
            }
            BoostRule::Osher => b(&osher_arg)?,
            BoostRule::CharestMilanfar => {
                let bz = b(&z)?;
                lincomb(noisy, 1.0, &lincomb(&z, 1.0, &bz, -1.0), 1.0)
            }
            BoostRule::Sos => {
                let sum = lincomb(noisy, 1.0, &z, 1.0);
                lincomb(&b(&sum)?, 1.0, &z, -1.0)
            }
        };
        if spec.rule == BoostRule::Osher {
            // fold the new residual y - z^(t+1) into the running argument
            osher_arg = lincomb(&osher_arg, 1.0, &lincomb(noisy, 1.0, &next, -1.0), 1.0);
        }
        z = next;
        iterates.push(z.clone());
    }
    Ok(iterates)
}

/// Final iterate of `boost_trajectory`.
pub fn boost(spec: &BoosterSpec, noisy: &Image, initial: &Image) -> Result<Image> {
    let mut traj = boost_trajectory(spec, noisy, initial)?;
    Ok(traj.pop().expect("iterations >= 1"))
}
