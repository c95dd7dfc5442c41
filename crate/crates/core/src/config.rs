//! Plain-text `key=value` run configuration with `#` comments.
//!
//! List values are comma-separated; unknown keys are rejected so typos fail
//! loudly instead of silently running a default experiment.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::denoise::{BoostRule, BoosterSpec, DenoiserKind, DenoiserSpec};
use crate::error::{Error, Result};
use crate::image::NoiseModel;
use crate::solver::SolverId;

pub const DEFAULT_SIGMA255: f64 = 25.0;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_SURE_PROBES: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum MseMode {
    Oracle,
    Sure,
    External(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Ground-truth image; required for oracle MSE mode and noise injection.
    pub clean: Option<PathBuf>,
    /// Pre-noised input; when absent, noise is injected into `clean`.
    pub noisy: Option<PathBuf>,
    pub noise: NoiseModel,
    pub denoisers: Vec<DenoiserSpec>,
    pub mse_mode: MseMode,
    pub solver: SolverId,
    pub max_iter: usize,
    pub booster: Option<BoosterSpec>,
    pub sure_epsilon: f64,
    /// Number of Monte-Carlo divergence probes averaged per SURE estimate.
    pub sure_probes: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.denoisers.is_empty() {
            return Err(Error::Config("at least one denoiser is required".into()));
        }
        if self.clean.is_none() && self.noisy.is_none() {
            return Err(Error::Config("either clean= or noisy= must be given".into()));
        }
        if self.mse_mode == MseMode::Oracle && self.clean.is_none() {
            return Err(Error::Config("mse_mode=oracle requires clean=".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if !(self.sure_epsilon > 0.0) {
            return Err(Error::Config("sure_epsilon must be > 0".into()));
        }
        if self.sure_probes == 0 {
            return Err(Error::Config("sure_probes must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            clean: None,
            noisy: None,
            noise: NoiseModel { sigma255: DEFAULT_SIGMA255, clipped: false, seed: 0 },
            denoisers: Vec::new(),
            mse_mode: MseMode::Oracle,
            solver: SolverId::FrankWolfe,
            max_iter: DEFAULT_MAX_ITER,
            booster: None,
            sure_epsilon: crate::mse::DEFAULT_SURE_EPSILON,
            sure_probes: DEFAULT_SURE_PROBES,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: not a number: '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: not a count: '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: not a boolean: '{value}'"))),
    }
}

/// One denoiser from `kind:strength[:sigma_hat255]` or `external:path`.
pub fn parse_denoiser(token: &str) -> Result<DenoiserSpec> {
    let token = token.trim();
    let (kind, rest) = token
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("denoiser '{token}': expected kind:strength")))?;
    match kind {
        "external" => DenoiserSpec::new(DenoiserKind::ExternalFile(PathBuf::from(rest)), 1.0, 0.0),
        "blur" | "gaussian_blur" => {
            DenoiserSpec::new(DenoiserKind::GaussianBlur, parse_f64("blur strength", rest)?, 0.0)
        }
        "median" => DenoiserSpec::new(DenoiserKind::Median, parse_f64("median window", rest)?, 0.0),
        "dct" | "dct_threshold" => {
            let (strength, sigma) = match rest.split_once(':') {
                Some((s, sg)) => (
                    parse_f64("dct strength", s)?,
                    parse_f64("dct sigma_hat255", sg)?,
                ),
                None => (parse_f64("dct strength", rest)?, DEFAULT_SIGMA255),
            };
            DenoiserSpec::new(DenoiserKind::DctThreshold, strength, sigma)
        }
        other => Err(Error::Config(format!("unknown denoiser kind '{other}'"))),
    }
}

/// Booster from `rule:iterations:inner-denoiser-token`.
pub fn parse_booster(token: &str) -> Result<BoosterSpec> {
    let mut parts = token.splitn(3, ':');
    let rule = parts
        .next()
        .ok_or_else(|| Error::Config(format!("booster '{token}': empty")))?;
    let iters = parts
        .next()
        .ok_or_else(|| Error::Config(format!("booster '{token}': missing iteration count")))?;
    let inner = parts
        .next()
        .ok_or_else(|| Error::Config(format!("booster '{token}': missing inner denoiser")))?;
    BoosterSpec::new(
        BoostRule::parse(rule)?,
        parse_usize("booster iterations", iters)?,
        parse_denoiser(inner)?,
    )
}

pub fn parse_solver(name: &str) -> Result<SolverId> {
    Ok(match name {
        "frank_wolfe" | "fw" => SolverId::FrankWolfe,
        "projected_gradient" | "pg" => SolverId::ProjectedGradient,
        other => return Err(Error::Config(format!("unknown solver '{other}'"))),
    })
}

fn parse_mse_mode(value: &str) -> Result<MseMode> {
    if value == "oracle" {
        Ok(MseMode::Oracle)
    } else if value == "sure" {
        Ok(MseMode::Sure)
    } else if let Some(path) = value.strip_prefix("external:") {
        Ok(MseMode::External(PathBuf::from(path)))
    } else {
        Err(Error::Config(format!("unknown mse_mode '{value}'")))
    }
}

/// Parses `key=value` text into a `RunConfig`. Later keys override earlier
/// ones; unknown keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map: HashMap<&str, &str> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        let key = key.trim();
        if !map.contains_key(key) {
            order.push(key);
        }
        map.insert(key, value.trim());
    }

    let mut cfg = RunConfig::default();
    for key in order {
        let value = map[key];
        match key {
            "clean" => cfg.clean = Some(PathBuf::from(value)),
            "noisy" => cfg.noisy = Some(PathBuf::from(value)),
            "sigma255" => cfg.noise.sigma255 = parse_f64(key, value)?,
            "clipped" => cfg.noise.clipped = parse_bool(key, value)?,
            "seed" => cfg.noise.seed = parse_usize(key, value)? as u64,
            "denoisers" => {
                cfg.denoisers = value
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(parse_denoiser)
                    .collect::<Result<_>>()?;
            }
            "mse_mode" => cfg.mse_mode = parse_mse_mode(value)?,
            "solver" => cfg.solver = parse_solver(value)?,
            "max_iter" => cfg.max_iter = parse_usize(key, value)?,
            "booster" => cfg.booster = Some(parse_booster(value)?),
            "sure_epsilon" => cfg.sure_epsilon = parse_f64(key, value)?,
            "sure_probes" => cfg.sure_probes = parse_usize(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
# comment line
clean = img.pgm
sigma255 = 25   # trailing comment
clipped = false
seed = 7
denoisers = blur:1.5, median:3, dct:2.7:25
mse_mode = oracle
solver = fw
max_iter = 300
";

    #[test]
    fn parses_full_config() {
        let cfg = parse_config(GOOD).unwrap();
        assert_eq!(cfg.clean.as_ref().unwrap().to_str().unwrap(), "img.pgm");
        assert_eq!(cfg.noise.sigma255, 25.0);
        assert_eq!(cfg.noise.seed, 7);
        assert_eq!(cfg.denoisers.len(), 3);
        assert_eq!(cfg.denoisers[0].kind, DenoiserKind::GaussianBlur);
        assert_eq!(cfg.denoisers[1].strength, 3.0);
        assert_eq!(cfg.denoisers[2].sigma_hat255, 25.0);
        assert_eq!(cfg.solver, SolverId::FrankWolfe);
        assert_eq!(cfg.max_iter, 300);
        assert_eq!(cfg.mse_mode, MseMode::Oracle);
    }

    #[test]
    fn rejects_unknown_key_and_bad_lines() {
        assert!(parse_config("clean=a.pgm\ndenoisers=blur:1\nfrobnicate=1\n").is_err());
        assert!(parse_config("clean a.pgm\n").is_err());
    }

    #[test]
    fn oracle_requires_clean() {
        let err = parse_config("noisy=n.pgm\ndenoisers=blur:1\nmse_mode=oracle\n");
        assert!(err.is_err());
        let ok = parse_config("noisy=n.pgm\ndenoisers=blur:1\nmse_mode=sure\n");
        assert!(ok.is_ok());
    }

    #[test]
    fn requires_a_denoiser_and_an_input() {
        assert!(parse_config("clean=a.pgm\n").is_err());
        assert!(parse_config("denoisers=blur:1\n").is_err());
    }

    #[test]
    fn parses_external_and_booster_tokens() {
        let d = parse_denoiser("external:path/to/est.pgm").unwrap();
        assert_eq!(d.kind, DenoiserKind::ExternalFile(PathBuf::from("path/to/est.pgm")));
        let b = parse_booster("twicing:3:blur:1.0").unwrap();
        assert_eq!(b.rule, BoostRule::Twicing);
        assert_eq!(b.iterations, 3);
        assert_eq!(b.inner.kind, DenoiserKind::GaussianBlur);
        assert!(parse_booster("unknown:3:blur:1.0").is_err());
        assert!(parse_booster("twicing:0:blur:1.0").is_err());
    }

    #[test]
    fn parses_external_mse_mode() {
        let cfg =
            parse_config("noisy=n.pgm\ndenoisers=blur:1\nmse_mode=external:mse.txt\n").unwrap();
        assert_eq!(cfg.mse_mode, MseMode::External(PathBuf::from("mse.txt")));
    }

    #[test]
    fn later_keys_override_earlier() {
        let cfg = parse_config("clean=a.pgm\ndenoisers=blur:1\nseed=1\nseed=9\n").unwrap();
        assert_eq!(cfg.noise.seed, 9);
    }
}
