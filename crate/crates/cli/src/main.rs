//! `wmprior`: validate the SPDE/Matérn connection, fit semivariograms, solve
//! inverse problems and draw prior samples.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{parse_alpha, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;
use wmprior::solver::{BlurKernel, PriorKind};
use wmprior::spde::Boundary;
use wmprior::Error;

#[derive(Parser, Debug)]
#[command(name = "wmprior", version, about = "Semivariogram-driven Whittle-Matérn priors")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct PriorArgs {
    #[arg(long)]
    nu: Option<f64>,
    /// Isotropic length, or the major length with --ell2.
    #[arg(long)]
    ell: Option<f64>,
    /// Minor length; makes the prior anisotropic.
    #[arg(long)]
    ell2: Option<f64>,
    /// Major-axis angle in degrees.
    #[arg(long)]
    theta: Option<f64>,
    /// periodic or dirichlet.
    #[arg(long)]
    boundary: Option<Boundary>,
    /// Domain extension factor (default: from the correlation length).
    #[arg(long)]
    extension: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare empirical prior correlations with the Matérn correlation.
    ValidateConnection {
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Pass when the relative Frobenius error is below this.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Fit Matérn semivariograms to an image (PNG) or field (CSV).
    Fit {
        input: Option<PathBuf>,
        /// Also compute the 12 directional semivariograms and the anisotropy.
        #[arg(long)]
        directional: bool,
        #[arg(long)]
        max_lag: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// MAP reconstruction with semivariogram-estimated hyperparameters.
    Solve {
        input: Option<PathBuf>,
        /// isotropic, anisotropic, regional or tikhonov.
        #[arg(long)]
        prior: Option<PriorKind>,
        /// Observation mask (nonzero = observed).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Ground truth; enables metrics and the oracle alpha.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Region labels for the regional prior.
        #[arg(long)]
        regions: Option<PathBuf>,
        /// gcv, oracle, noise=<sigma> or a fixed value.
        #[arg(long)]
        alpha: Option<String>,
        /// Gaussian blur standard deviation in pixels (0 = none).
        #[arg(long)]
        blur_std: Option<f64>,
        #[arg(long, default_value_t = 9)]
        blur_size: usize,
        #[arg(long)]
        extension: Option<f64>,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Draw samples from the prior.
    Sample {
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
}

/// Exit codes.
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_)
        | Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::UnsupportedSampling(_)
        | Error::Io(_)
        | Error::Image(_)
        | Error::Parse(_) => EXIT_USAGE,
        Error::DegenerateField(_)
        | Error::FitFailure(_)
        | Error::NoCrossing { .. }
        | Error::NotPositiveDefinite(_)
        | Error::RegionCholesky { .. }
        | Error::CgNotConverged { .. }
        | Error::NonFinite(_) => EXIT_NUMERICAL,
    }
}

fn apply_prior(cfg: &mut RunConfig, p: &PriorArgs) {
    let s = &mut cfg.prior;
    if let Some(v) = p.nu {
        s.nu = v;
    }
    if let Some(v) = p.ell {
        s.ell = v;
    }
    if p.ell2.is_some() {
        s.ell2 = p.ell2;
    }
    if let Some(v) = p.theta {
        s.theta_deg = v;
    }
    if let Some(v) = p.boundary {
        s.boundary = v;
    }
    if p.extension.is_some() {
        s.extension = p.extension;
    }
}

fn resolve(cli: &Cli) -> wmprior::Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::ValidateConnection {
            prior,
            n,
            samples,
            threshold,
        } => {
            apply_prior(&mut cfg, prior);
            let c = &mut cfg.connection;
            c.n = n.unwrap_or(c.n);
            c.samples = samples.unwrap_or(c.samples);
            c.threshold = threshold.unwrap_or(c.threshold);
        }
        Command::Fit {
            input,
            directional,
            max_lag,
            bins,
        } => {
            if input.is_some() {
                cfg.fit.input = input.clone();
            }
            cfg.fit.directional |= directional;
            let sv = &mut cfg.pipeline.variogram.semivariogram;
            sv.max_lag = max_lag.unwrap_or(sv.max_lag);
            sv.n_bins = bins.unwrap_or(sv.n_bins);
        }
        Command::Solve {
            input,
            prior,
            mask,
            truth,
            regions,
            alpha,
            blur_std,
            blur_size,
            extension,
            max_iterations,
        } => {
            let s = &mut cfg.solve;
            for (dst, src) in [
                (&mut s.input, input),
                (&mut s.mask, mask),
                (&mut s.truth, truth),
                (&mut s.regions, regions),
            ] {
                if src.is_some() {
                    *dst = src.clone();
                }
            }
            s.prior = prior.unwrap_or(s.prior);
            s.extension = extension.unwrap_or(s.extension);
            if let Some(std) = blur_std {
                s.blur = if *std > 0.0 {
                    BlurKernel::Gaussian {
                        std: *std,
                        size: *blur_size,
                    }
                } else {
                    BlurKernel::None
                };
            }
            if let Some(a) = alpha {
                cfg.pipeline.alpha = parse_alpha(a)?;
            }
            cfg.pipeline.max_iterations = max_iterations.unwrap_or(cfg.pipeline.max_iterations);
        }
        Command::Sample { prior, n, count } => {
            apply_prior(&mut cfg, prior);
            cfg.sample.n = n.unwrap_or(cfg.sample.n);
            cfg.sample.count = count.unwrap_or(cfg.sample.count);
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> wmprior::Result<u8> {
    let cfg = resolve(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join("config.toml"), cfg.to_toml()?)?;
    match cli.command {
        Command::ValidateConnection { .. } => commands::validate_connection(&cfg, &cli.out),
        Command::Fit { .. } => commands::fit(&cfg, &cli.out),
        Command::Solve { .. } => commands::solve(&cfg, &cli.out),
        Command::Sample { .. } => commands::sample(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
