use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use denoise_ensemble::config::{load_config, parse_denoiser};
use denoise_ensemble::error::{Error, Result};
use denoise_ensemble::pgm::read_pgm;
use denoise_ensemble::pipeline;

#[derive(Parser)]
#[command(
    name = "denoise-ensemble",
    about = "Optimally combine image denoisers via error-covariance estimation"
)]
struct Cli {
    /// Run configuration (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise, estimate MSEs, solve for optimal weights, write the
    /// combined image and reports.
    Combine,
    /// Re-run combine across a list of noise levels.
    Sweep {
        /// Comma-separated sigma values on the [0,255] scale.
        #[arg(long)]
        sigmas: String,
    },
    /// Benchmark the solvers on random covariance instances.
    BenchSolver {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Compare Monte-Carlo SURE against oracle MSE over noise realizations.
    SureStudy {
        /// Clean reference image (PGM).
        #[arg(long)]
        clean: PathBuf,
        /// Denoiser under study, e.g. blur:1.5 or dct:2.7:25.
        #[arg(long)]
        denoiser: String,
        /// Comma-separated sigma values on the [0,255] scale.
        #[arg(long)]
        sigmas: String,
        /// Clamp the noisy image to [0,1] (breaks the SURE assumptions).
        #[arg(long, default_value_t = false)]
        clipped: bool,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Finite-difference step of the divergence probe.
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
    /// Run the configured boosting recursion and report per-iteration MSE.
    Boost,
    /// Run each configured denoiser and write its output.
    Denoise,
}

fn parse_sigmas(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad sigma value '{t}'")))
        })
        .collect()
}

fn require_config(cli: &Cli) -> Result<denoise_ensemble::config::RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command requires --config".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Combine => {
            let cfg = require_config(cli)?;
            let r = pipeline::run_combine(&cfg, &cli.out)?;
            println!("objective {:e} lower_bound {:e}", r.objective, r.lower_bound);
            Ok(())
        }
        Command::Sweep { sigmas } => {
            let cfg = require_config(cli)?;
            pipeline::run_sweep(&cfg, &parse_sigmas(sigmas)?, &cli.out)
        }
        Command::BenchSolver { k, trials } => {
            pipeline::run_bench_solver(*k, *trials, cli.seed.unwrap_or(0), &cli.out)
        }
        Command::SureStudy { clean, denoiser, sigmas, clipped, trials, epsilon } => {
            let clean = read_pgm(clean)?;
            let spec = parse_denoiser(denoiser)?;
            pipeline::run_sure_study(
                &clean,
                &spec,
                &parse_sigmas(sigmas)?,
                *clipped,
                *trials,
                cli.seed.unwrap_or(0),
                *epsilon,
                &cli.out,
            )
        }
        Command::Boost => {
            let cfg = require_config(cli)?;
            pipeline::run_boost(&cfg, &cli.out)
        }
        Command::Denoise => {
            let cfg = require_config(cli)?;
            pipeline::run_denoise(&cfg, &cli.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
