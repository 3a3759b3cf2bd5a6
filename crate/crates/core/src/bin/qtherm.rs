use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qtherm::error::Error;
use qtherm::experiments::{run_and_emit, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "qtherm",
    version,
    about = "Thermalization sweeps for small system-bath models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Worker threads; defaults to QTHERM_THREADS, then the core count.
    #[arg(long, global = true, env = "QTHERM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Eigenvalue histograms of sampled system and bath Hamiltonians.
    Dos,
    /// Distance and rate statistics over random baths.
    Ensemble,
    /// Ensembles across a list of inverse temperatures and bath sizes.
    BetaSweep,
    /// Fixed-point distance to the mixed state at shrinking interaction times.
    Zeno,
    /// Exact and phase-estimated Metropolis chains with perturbation bounds.
    Chain2,
    /// Mean trace distance between random density matrices.
    DmDistance,
    /// Two-point correlators and kick response.
    Correlate,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Dos => ExperimentKind::DosHistogram,
            Command::Ensemble => ExperimentKind::BathEnsemble,
            Command::BetaSweep => ExperimentKind::BetaSweep,
            Command::Zeno => ExperimentKind::ZenoProbe,
            Command::Chain2 => ExperimentKind::Chain2Sweep,
            Command::DmDistance => ExperimentKind::RandomDmDistance,
            Command::Correlate => ExperimentKind::CorrelationSweep,
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let kind = cli.command.kind();
    let mut cfg = match &cli.common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let cfg = ExperimentConfig::from_json(&text)?;
            if value.get("kind").is_some() && cfg.kind != kind {
                return Err(Error::Config(format!(
                    "config kind {:?} does not match the subcommand",
                    cfg.kind
                )));
            }
            cfg
        }
        None => ExperimentConfig::default(),
    };
    cfg.kind = kind;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(samples) = cli.common.samples {
        cfg.samples = samples;
    }
    if let Some(dir) = &cli.common.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    match run_and_emit(&cfg, &dir) {
        Ok(files) => {
            println!("{}", files.csv.display());
            println!("{}", files.summary.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
