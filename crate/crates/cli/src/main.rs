use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use statsep::io::{save_complex, save_png, save_real};
use statsep::oracle::{
    check_linear, check_quadratic, check_spectral, format_table, run_oracle_suite, OracleCheck, OracleOptions,
};
use statsep::synthdata::TextureKind;
use statsep::wph::{normalize, wph_compute, NormalizationRef};

mod config;
mod plot;
mod run;

use config::{Algorithm, RunConfig};

/// Invalid or unusable configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Non-finite loss during optimization (exit code 3).
#[derive(Debug)]
pub struct NumericalAbort {
    pub stage: usize,
    pub iteration: usize,
}

impl fmt::Display for NumericalAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "numerical abort: non-finite loss at stage {}, iteration {}",
            self.stage, self.iteration
        )
    }
}

impl std::error::Error for NumericalAbort {}

#[derive(Parser)]
#[command(name = "statsep", version, about = "Statistical component separation and denoising")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; STATSEP_THREADS takes precedence.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise one field and write the estimate, trace and scores.
    Denoise {
        /// Clean field (.ssf or .png); overrides the config input.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
        /// Noise amplitude in units of the clean field's std.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Run the algorithms over a sigma grid and realizations; writes a CSV and plots.
    Sweep {
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Generate a synthetic texture.
    Synth {
        #[arg(long)]
        kind: Option<TextureKind>,
        /// Square size in pixels.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        slope: Option<f64>,
    },
    /// Check numerical minima of the Monte Carlo loss against closed forms.
    OracleCheck {
        /// Expect the wrong threshold: the quadratic check must then fail.
        #[arg(long)]
        forced_bug: bool,
        /// Run only these checks (quadratic, linear, spectral).
        #[arg(long = "check")]
        checks: Vec<String>,
    },
    /// Write the WPH coefficients of a field as CSV.
    WphDump {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Divide by the field's own S11 coefficients.
        #[arg(long)]
        normalize: bool,
        /// Also write each filter's Fourier transform as a grid file.
        #[arg(long)]
        filters: bool,
    },
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    toml::Value::String(s.to_string())
        .try_into()
        .map_err(|_| format!("unknown algorithm '{s}' (vanilla, diffusive, perturbative, delouis, analytic-oracle)"))
}

fn jobs(cli_jobs: Option<usize>, cfg: &RunConfig) -> Result<usize> {
    if let Ok(v) = std::env::var("STATSEP_THREADS") {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ConfigError(format!("STATSEP_THREADS must be a positive integer, got '{v}'")).into());
    }
    Ok(cli_jobs.unwrap_or(cfg.jobs).max(1))
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Denoise {
            input,
            algorithm,
            sigma,
        } => {
            if let Some(p) = input {
                cfg.input.path = Some(p.clone());
            }
            if let Some(a) = algorithm {
                cfg.algorithm = *a;
            }
            if let Some(s) = sigma {
                cfg.noise.sigma = *s;
            }
        }
        Command::Sweep { realizations } => {
            if let Some(r) = realizations {
                cfg.realizations = *r;
            }
        }
        Command::Synth { kind, size, slope } => {
            let t = &mut cfg.input.texture;
            if let Some(k) = kind {
                t.kind = *k;
            }
            if let Some(n) = size {
                t.height = *n;
                t.width = *n;
            }
            if let Some(s) = slope {
                t.spectral_slope = *s;
            }
        }
        Command::WphDump { input, .. } => {
            if let Some(p) = input {
                cfg.input.path = Some(p.clone());
                cfg.input.observed = false;
            }
        }
        Command::OracleCheck { .. } => {}
    }
    cfg.validate()?;
    let jobs = jobs(cli.jobs, &cfg)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("starting the thread pool")?;

    match cli.command {
        Command::Denoise { .. } => run::denoise(&cfg),
        Command::Sweep { .. } => run::sweep(&cfg, jobs),
        Command::Synth { .. } => {
            let f = run::clean_field(&cfg)?.expect("texture input");
            fs::create_dir_all(&cfg.out)?;
            save_real(cfg.out.join("texture.ssf"), &f)?;
            save_png(cfg.out.join("texture.png"), &f)?;
            println!("wrote {}x{} texture to {}", f.height(), f.width(), cfg.out.display());
            Ok(())
        }
        Command::OracleCheck { forced_bug, checks } => {
            let opts = OracleOptions {
                seed: cfg.seed,
                forced_bug,
            };
            let checks = if checks.is_empty() {
                run_oracle_suite(&opts)
            } else {
                let all: [(&str, fn(&OracleOptions) -> OracleCheck); 3] =
                    [("quadratic", check_quadratic), ("linear", check_linear), ("spectral", check_spectral)];
                let mut out = Vec::new();
                for name in &checks {
                    let (_, f) = all
                        .iter()
                        .find(|(n, _)| n == name)
                        .ok_or_else(|| ConfigError(format!("unknown oracle check '{name}'")))?;
                    out.push(f(&opts));
                }
                out
            };
            print!("{}", format_table(&checks));
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                anyhow::bail!("{failed} oracle checks failed");
            }
            Ok(())
        }
        Command::WphDump {
            normalize: norm,
            filters,
            ..
        } => {
            let f = match &cfg.input.path {
                Some(p) => statsep::io::load_field(p).with_context(|| format!("loading {}", p.display()))?,
                None => run::clean_field(&cfg)?.expect("texture input"),
            };
            let bank = run::filter_bank(&cfg, f.shape())?;
            let mask = cfg.representation.mask(cfg.algorithm)?;
            let mut c = wph_compute(&f, &bank, mask)?;
            if norm {
                c = normalize(&c, &NormalizationRef::from_field(&f, &bank)?)?;
            }
            fs::create_dir_all(&cfg.out)?;
            c.write_csv(BufWriter::new(File::create(cfg.out.join("wph.csv"))?))?;
            if filters {
                let dir = cfg.out.join("filters");
                fs::create_dir_all(&dir)?;
                for i in 0..bank.len() {
                    let (j, l) = bank.scale_orientation(i);
                    save_complex(dir.join(format!("psi_j{j}_l{l}.ssf")), bank.filter(i).as_field())?;
                }
            }
            println!(
                "wrote {} coefficients (J={}, L={}) to {}",
                c.len(),
                bank.scales(),
                bank.orientations(),
                cfg.out.join("wph.csv").display()
            );
            Ok(())
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<NumericalAbort>() {
            return 3;
        }
        if let Some(se) = cause.downcast_ref::<statsep::Error>() {
            match se {
                statsep::Error::InvalidConfig(_)
                | statsep::Error::InvalidGeometry(_)
                | statsep::Error::InvalidField(_)
                | statsep::Error::Format(_) => return 2,
                statsep::Error::NonFiniteLoss { .. } | statsep::Error::NearZeroModulus { .. } => return 3,
                _ => {}
            }
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
