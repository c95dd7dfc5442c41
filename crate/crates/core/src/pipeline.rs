//! Experiment drivers behind the CLI verbs: combine, sweep, bench-solver,
//! sure-study, boost, denoise. Every driver is seeded and writes
//! deterministic CSV/PGM outputs (`,` separators, `\n` endings, 15
//! significant digits).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{MseMode, RunConfig};
use crate::covariance::{
    build_covariance, oracle_covariance, pairwise_sq_dist, psd_project, CovMatrix, Provenance,
};
use crate::denoise::{denoise, boost_trajectory, DenoiserSpec};
use crate::error::{Error, Result};
use crate::image::{
    add_noise, combine_estimates, mse_between, psnr, EstimateSet, Image, NoiseModel, WeightVector,
};
use crate::linalg;
use crate::mse::{load_external_mse, mc_sure, oracle_mse, MseMethod, MseReport};
use crate::pgm::{read_pgm, write_pgm};
use crate::solver::{closed_form_relaxed, solve_fw, solve_pg, SolveReport, SolverId};

/// 15-significant-digit decimal for CSV cells.
pub fn fmt15(x: f64) -> String {
    format!("{x:.14e}")
}

/// SplitMix64 round: derives independent per-task seeds from a base seed.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(salt.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io { path: dir.display().to_string(), source: e })
}

/// Tracks files written by a command so partial outputs can be removed when
/// a later stage fails.
struct OutputSet {
    written: Vec<PathBuf>,
}

impl OutputSet {
    fn new() -> Self {
        OutputSet { written: Vec::new() }
    }

    fn text(&mut self, path: PathBuf, content: &str) -> Result<()> {
        write_text(&path, content)?;
        self.written.push(path);
        Ok(())
    }

    fn pgm(&mut self, path: PathBuf, image: &Image) -> Result<()> {
        write_pgm(&path, image)?;
        self.written.push(path);
        Ok(())
    }

    fn discard(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Loads the clean/noisy pair: an explicit noisy file wins; otherwise noise
/// is injected into the clean image under the configured model.
fn load_inputs(cfg: &RunConfig) -> Result<(Option<Image>, Image)> {
    let clean = cfg.clean.as_deref().map(read_pgm).transpose()?;
    let noisy = match &cfg.noisy {
        Some(path) => read_pgm(path)?,
        None => {
            let c = clean
                .as_ref()
                .ok_or_else(|| Error::Config("no noisy image and no clean image to noise".into()))?;
            add_noise(c, &cfg.noise)?
        }
    };
    if let Some(c) = &clean {
        if !c.same_shape(&noisy) {
            return Err(Error::ShapeMismatch("clean and noisy image shapes differ".into()));
        }
    }
    Ok((clean, noisy))
}

fn run_denoisers(specs: &[DenoiserSpec], noisy: &Image) -> Result<EstimateSet> {
    let mut estimates = Vec::with_capacity(specs.len());
    let mut labels = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        estimates.push(denoise(spec, noisy)?);
        // index prefix keeps labels unique even for repeated specs
        labels.push(format!("{i}:{}", spec.label()));
    }
    EstimateSet::new(estimates, labels, noisy.clone())
}

fn estimate_mse(cfg: &RunConfig, set: &EstimateSet, clean: Option<&Image>, noisy: &Image) -> Result<MseReport> {
    match &cfg.mse_mode {
        MseMode::Oracle => {
            let clean = clean.ok_or_else(|| Error::Config("oracle MSE needs clean=".into()))?;
            oracle_mse(set, clean)
        }
        MseMode::Sure => {
            let sigma = cfg.noise.sigma();
            let mut per_denoiser = Vec::with_capacity(set.k());
            for (i, spec) in cfg.denoisers.iter().enumerate() {
                let d = |img: &Image| denoise(spec, img);
                let mut acc = 0.0;
                for p in 0..cfg.sure_probes {
                    let seed = derive_seed(cfg.noise.seed, 0x5u64 + (i * cfg.sure_probes + p) as u64);
                    acc += mc_sure(d, noisy, sigma, cfg.sure_epsilon, seed)?;
                }
                per_denoiser.push(acc / cfg.sure_probes as f64);
            }
            Ok(MseReport {
                per_denoiser,
                per_patch: None,
                patch_counts: None,
                method: MseMethod::McSure,
                patch_size: crate::mse::DEFAULT_PATCH,
            })
        }
        MseMode::External(path) => load_external_mse(path, set.k()),
    }
}

fn solve_with(solver: SolverId, sigma: &CovMatrix, max_iter: usize) -> Result<SolveReport> {
    match solver {
        SolverId::FrankWolfe => solve_fw(sigma, max_iter),
        SolverId::ProjectedGradient => solve_pg(sigma, max_iter, None),
        other => Err(Error::InvalidParameter(format!(
            "solver {} is not an iterative pipeline solver",
            other.name()
        ))),
    }
}

/// Everything `combine` computed, for callers that want the values as well
/// as the files.
pub struct CombineResult {
    pub weights: WeightVector,
    pub objective: f64,
    pub lower_bound: f64,
    pub mse_est: Vec<f64>,
    pub mse_oracle: Option<Vec<f64>>,
    pub combined_mse_oracle: Option<f64>,
    pub sigma: CovMatrix,
}

pub fn run_combine(cfg: &RunConfig, out_dir: &Path) -> Result<CombineResult> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let mut outputs = OutputSet::new();
    match combine_inner(cfg, out_dir, &mut outputs) {
        Ok(r) => Ok(r),
        Err(e) => {
            outputs.discard();
            Err(e)
        }
    }
}

fn combine_inner(
    cfg: &RunConfig,
    out_dir: &Path,
    outputs: &mut OutputSet,
) -> Result<CombineResult> {
    let (clean, noisy) = load_inputs(cfg)?;
    let set = run_denoisers(&cfg.denoisers, &noisy)?;

    let mse = estimate_mse(cfg, &set, clean.as_ref(), &noisy)?;
    let dist = pairwise_sq_dist(&set);
    let provenance = match mse.method {
        MseMethod::Oracle => Provenance::Oracle,
        _ => Provenance::Estimated,
    };
    let mut sigma = build_covariance(&mse.per_denoiser, &dist, provenance)?;

    let min_eig = sigma.min_eigenvalue()?;
    if min_eig < 0.0 {
        eprintln!(
            "covariance not PSD (min eigenvalue {:e}); repairing via eigenvalue truncation",
            min_eig
        );
        sigma = psd_project(&sigma)?;
    }
    if provenance == Provenance::Estimated {
        if let Some(c) = &clean {
            // estimated vs oracle covariance mismatch, for the logs
            let oracle = oracle_covariance(&set, c)?;
            let delta: Vec<f64> = sigma
                .entries()
                .iter()
                .zip(oracle.entries())
                .map(|(a, b)| a - b)
                .collect();
            let delta_norm = linalg::spectral_norm(&delta, sigma.k())?;
            eprintln!("||estimated - oracle covariance||_2 = {:e}", delta_norm);
        }
    }

    let report = solve_with(cfg.solver, &sigma, cfg.max_iter)?;
    let combined = combine_estimates(&set, &report.weights)?;
    let combined_mse_oracle = clean
        .as_ref()
        .map(|c| mse_between(&combined, c))
        .transpose()?;
    let mse_oracle = match &clean {
        Some(c) => Some(oracle_mse(&set, c)?.per_denoiser),
        None => None,
    };

    // report.csv: label,mse_est,mse_oracle,weight (mse_oracle blank without
    // ground truth), plus combined and lower_bound rows
    let mut csv = String::from("label,mse_est,mse_oracle,weight\n");
    for (k, label) in set.labels().iter().enumerate() {
        let oracle_cell = mse_oracle
            .as_ref()
            .map(|m| fmt15(m[k]))
            .unwrap_or_default();
        let _ = writeln!(
            csv,
            "{label},{},{oracle_cell},{}",
            fmt15(mse.per_denoiser[k]),
            fmt15(report.weights.as_slice()[k])
        );
    }
    let combined_oracle_cell = combined_mse_oracle.map(fmt15).unwrap_or_default();
    let _ = writeln!(
        csv,
        "combined,{},{combined_oracle_cell},{}",
        fmt15(report.objective),
        fmt15(1.0)
    );
    let _ = writeln!(csv, "lower_bound,{},,", fmt15(report.lower_bound));
    outputs.text(out_dir.join("report.csv"), &csv)?;

    let mut weights_txt = String::new();
    for w in report.weights.as_slice() {
        let _ = writeln!(weights_txt, "{}", fmt15(*w));
    }
    outputs.text(out_dir.join("weights.txt"), &weights_txt)?;

    let mut traj = String::from("iter,objective\n");
    for (t, f) in report.trajectory.iter().enumerate() {
        let _ = writeln!(traj, "{t},{}", fmt15(*f));
    }
    outputs.text(out_dir.join("trajectory.csv"), &traj)?;

    outputs.text(out_dir.join("covariance.txt"), &sigma.to_text())?;
    outputs.pgm(out_dir.join("combined.pgm"), &combined)?;

    // optional booster applied to the combined estimate (the tail of the
    // denoise -> estimate -> solve -> boost pipeline)
    if let Some(bspec) = &cfg.booster {
        let boosted = boost_trajectory(bspec, &noisy, &combined)?;
        let final_img = boosted.last().expect("iterations >= 1");
        outputs.pgm(out_dir.join("boosted.pgm"), final_img)?;
    }

    Ok(CombineResult {
        weights: report.weights,
        objective: report.objective,
        lower_bound: report.lower_bound,
        mse_est: mse.per_denoiser,
        mse_oracle,
        combined_mse_oracle,
        sigma,
    })
}

/// Runs `combine` once per sigma with the denoiser lineup fixed, writing
/// long-form `sweep.csv` with columns `sigma,label,mse,psnr,weight`.
pub fn run_sweep(cfg: &RunConfig, sigma_list: &[f64], out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    if cfg.clean.is_none() {
        return Err(Error::Config("sweep requires clean=".into()));
    }
    if sigma_list.is_empty() {
        return Err(Error::Config("sweep needs at least one sigma".into()));
    }
    ensure_dir(out_dir)?;
    let mut outputs = OutputSet::new();

    let mut csv = String::from("sigma,label,mse,psnr,weight\n");
    for (i, &sigma255) in sigma_list.iter().enumerate() {
        let mut point = cfg.clone();
        point.noise.sigma255 = sigma255;
        point.noise.seed = derive_seed(cfg.noise.seed, i as u64);
        let sub = out_dir.join(format!("sigma_{i}"));
        let r = match run_combine(&point, &sub) {
            Ok(r) => r,
            Err(e) => {
                outputs.discard();
                return Err(e);
            }
        };
        let oracle = r.mse_oracle.as_ref().expect("sweep runs with clean");
        let (clean_labels, weights) = {
            let labels: Vec<String> =
                point.denoisers.iter().enumerate().map(|(k, d)| format!("{k}:{}", d.label())).collect();
            (labels, r.weights)
        };
        for (k, label) in clean_labels.iter().enumerate() {
            let m = oracle[k];
            let _ = writeln!(
                csv,
                "{},{label},{},{},{}",
                fmt15(sigma255),
                fmt15(m),
                fmt15(psnr(m)),
                fmt15(weights.as_slice()[k])
            );
        }
        let cm = r.combined_mse_oracle.expect("sweep runs with clean");
        let _ = writeln!(
            csv,
            "{},combined,{},{},{}",
            fmt15(sigma255),
            fmt15(cm),
            fmt15(psnr(cm)),
            fmt15(1.0)
        );
    }
    outputs.text(out_dir.join("sweep.csv"), &csv)?;
    Ok(())
}

/// Random strictly-PD covariance with eigenvalues log-uniform in
/// `[0.1, 10]` and a random orthogonal eigenbasis (Gram-Schmidt of a
/// Gaussian matrix).
pub fn random_pd_matrix(rng: &mut ChaCha8Rng, k: usize) -> CovMatrix {
    use rand_distr::StandardNormal;
    // eigenvalues
    let eigvals: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            10f64.powf(-1.0 + 2.0 * u)
        })
        .collect();
    // orthogonal basis via Gram-Schmidt, retrying on near-dependence
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let mut s = 0.0;
            for (l, b) in basis.iter().enumerate() {
                s += eigvals[l] * b[i] * b[j];
            }
            entries[i * k + j] = s;
            entries[j * k + i] = s;
        }
    }
    CovMatrix::from_entries(k, entries, Provenance::Oracle).expect("constructed symmetric")
}

/// Benchmarks both iterative solvers on random PD instances against the
/// best known objective, writing `bench.csv` with columns
/// `iter,solver,mean_obj_error`. Prints mean wall time per solve to stderr.
pub fn run_bench_solver(k: usize, trials: usize, seed: u64, out_dir: &Path) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("bench-solver needs k >= 2, got {k}")));
    }
    if trials == 0 {
        return Err(Error::Config("bench-solver needs trials >= 1".into()));
    }
    ensure_dir(out_dir)?;
    const MAX_ITER: usize = 500;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fw_err = vec![0.0; MAX_ITER + 1];
    let mut pg_err = vec![0.0; MAX_ITER + 1];
    let mut fw_time = 0.0;
    let mut pg_time = 0.0;
    for _ in 0..trials {
        let sigma = random_pd_matrix(&mut rng, k);

        let t0 = Instant::now();
        let fw = solve_fw(&sigma, MAX_ITER)?;
        fw_time += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let pg = solve_pg(&sigma, MAX_ITER, None)?;
        pg_time += t0.elapsed().as_secs_f64();

        let mut best = fw.objective.min(pg.objective);
        if let Ok(cf) = closed_form_relaxed(&sigma) {
            if cf.weights.as_slice().iter().all(|&w| w >= 0.0) {
                best = best.min(cf.objective);
            }
        }
        let scale = best.abs().max(1e-300);
        for (t, slot) in fw_err.iter_mut().enumerate() {
            // pad finished trajectories with their final value
            let f = fw.trajectory.get(t).copied().unwrap_or(fw.objective);
            *slot += ((f - best) / scale).max(0.0);
        }
        for (t, slot) in pg_err.iter_mut().enumerate() {
            let f = pg.trajectory.get(t).copied().unwrap_or(pg.objective);
            *slot += ((f - best) / scale).max(0.0);
        }
    }

    let mut csv = String::from("iter,solver,mean_obj_error\n");
    for (t, e) in fw_err.iter().enumerate() {
        let _ = writeln!(csv, "{t},frank_wolfe,{}", fmt15(e / trials as f64));
    }
    for (t, e) in pg_err.iter().enumerate() {
        let _ = writeln!(csv, "{t},projected_gradient,{}", fmt15(e / trials as f64));
    }
    write_text(&out_dir.join("bench.csv"), &csv)?;
    eprintln!(
        "mean wall time per solve: frank_wolfe {:.3} ms, projected_gradient {:.3} ms",
        1e3 * fw_time / trials as f64,
        1e3 * pg_time / trials as f64
    );
    Ok(())
}

fn stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

/// Per-sigma mean/std/min/max of Monte-Carlo SURE and of the oracle MSE
/// over repeated noise realizations; `sure_study.csv` has columns
/// `sigma,method,mean,std,min,max`.
#[allow(clippy::too_many_arguments)]
pub fn run_sure_study(
    clean: &Image,
    spec: &DenoiserSpec,
    sigma_list: &[f64],
    clipped: bool,
    trials: usize,
    seed: u64,
    epsilon: f64,
    out_dir: &Path,
) -> Result<()> {
    if sigma_list.is_empty() {
        return Err(Error::Config("sure-study needs at least one sigma".into()));
    }
    if trials == 0 {
        return Err(Error::Config("sure-study needs trials >= 1".into()));
    }
    ensure_dir(out_dir)?;

    let mut csv = String::from("sigma,method,mean,std,min,max\n");
    for (si, &sigma255) in sigma_list.iter().enumerate() {
        let mut sure_vals = Vec::with_capacity(trials);
        let mut oracle_vals = Vec::with_capacity(trials);
        for t in 0..trials {
            let noise = NoiseModel {
                sigma255,
                clipped,
                seed: derive_seed(seed, (si * trials + t) as u64),
            };
            let noisy = add_noise(clean, &noise)?;
            let d = |img: &Image| denoise(spec, img);
            let probe_seed = derive_seed(seed, 0xABCD + (si * trials + t) as u64);
            sure_vals.push(mc_sure(d, &noisy, noise.sigma(), epsilon, probe_seed)?);
            let est = denoise(spec, &noisy)?;
            oracle_vals.push(mse_between(&est, clean)?);
        }
        for (method, vals) in [("mc_sure", &sure_vals), ("oracle", &oracle_vals)] {
            let (mean, std, min, max) = stats(vals);
            let _ = writeln!(
                csv,
                "{},{method},{},{},{},{}",
                fmt15(sigma255),
                fmt15(mean),
                fmt15(std),
                fmt15(min),
                fmt15(max)
            );
        }
    }
    write_text(&out_dir.join("sure_study.csv"), &csv)?;
    Ok(())
}

/// Applies each configured denoiser to the input, writing one PGM per
/// denoiser plus `denoise.csv` with per-denoiser MSE/PSNR when ground truth
/// is available.
pub fn run_denoise(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let mut outputs = OutputSet::new();
    let r = (|| -> Result<()> {
        let (clean, noisy) = load_inputs(cfg)?;
        let set = run_denoisers(&cfg.denoisers, &noisy)?;
        outputs.pgm(out_dir.join("noisy.pgm"), &noisy)?;
        let mut csv = String::from("index,label,mse,psnr\n");
        for (i, (est, label)) in set.estimates().iter().zip(set.labels()).enumerate() {
            outputs.pgm(out_dir.join(format!("denoised_{i}.pgm")), est)?;
            if let Some(c) = &clean {
                let m = mse_between(est, c)?;
                let _ = writeln!(csv, "{i},{label},{},{}", fmt15(m), fmt15(psnr(m)));
            } else {
                let _ = writeln!(csv, "{i},{label},,");
            }
        }
        outputs.text(out_dir.join("denoise.csv"), &csv)?;
        Ok(())
    })();
    if r.is_err() {
        outputs.discard();
    }
    r
}

/// Runs the configured booster starting from its inner denoiser's output,
/// writing per-iteration images and `boost.csv` (`iter,mse,psnr`, MSE cells
/// blank without ground truth; iteration 0 is the initial estimate).
pub fn run_boost(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let bspec = cfg
        .booster
        .as_ref()
        .ok_or_else(|| Error::Config("boost requires booster= in the config".into()))?;
    ensure_dir(out_dir)?;
    let mut outputs = OutputSet::new();
    let r = (|| -> Result<()> {
        let (clean, noisy) = load_inputs(cfg)?;
        let initial = denoise(&bspec.inner, &noisy)?;
        let traj = boost_trajectory(bspec, &noisy, &initial)?;
        let mut csv = String::from("iter,mse,psnr\n");
        let mut row = |t: usize, img: &Image| -> Result<()> {
            if let Some(c) = &clean {
                let m = mse_between(img, c)?;
                let _ = writeln!(csv, "{t},{},{}", fmt15(m), fmt15(psnr(m)));
            } else {
                let _ = writeln!(csv, "{t},,");
            }
            Ok(())
        };
        row(0, &initial)?;
        outputs.pgm(out_dir.join("boost_0.pgm"), &initial)?;
        for (t, img) in traj.iter().enumerate() {
            row(t + 1, img)?;
            outputs.pgm(out_dir.join(format!("boost_{}.pgm", t + 1)), img)?;
        }
        outputs.text(out_dir.join("boost.csv"), &csv)?;
        Ok(())
    })();
    if r.is_err() {
        outputs.discard();
    }
    r
}
