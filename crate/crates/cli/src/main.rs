use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drtarget::config::Config;
use drtarget::forecast::Method;
use drtarget::pipeline::{self, Inputs};

#[derive(Parser)]
#[command(
    name = "drtarget",
    version,
    about = "Demand-response reduction estimates and user targeting"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Comma-separated subset of OLS, Lasso, Ridge, KNN, SVR, DT, ISO.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct InputArgs {
    /// user_id,timestamp,kwh
    #[arg(long)]
    meter: PathBuf,
    /// timestamp,temp_c
    #[arg(long)]
    temperature: PathBuf,
    /// user_id,start,duration_hours
    #[arg(long)]
    events: PathBuf,
    /// user_id,has_solar
    #[arg(long)]
    flags: PathBuf,
}

impl From<InputArgs> for Inputs {
    fn from(a: InputArgs) -> Self {
        Inputs {
            meter: a.meter,
            temperature: a.temperature,
            events: a.events,
            flags: a.flags,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw files, drop flagged users, resample temperature.
    Ingest(InputArgs),
    /// Standardize, remove spillover and build covariates.
    Prep,
    /// Fit every method and predict DR-hour counterfactuals.
    Forecast,
    /// Per-user reduction estimates and signed-rank tests.
    Effects,
    /// Cluster load shapes and score variability.
    Segment,
    /// Generate a synthetic population, or run the recovery sweep.
    Synth {
        #[arg(long)]
        recovery: bool,
    },
    /// Summaries and rejection-rate tables from the result files.
    Report,
    /// Every stage in order; uses a synthetic population without inputs.
    RunAll {
        #[arg(long, requires_all = ["temperature", "events", "flags"])]
        meter: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        flags: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> drtarget::Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = &g.methods {
        cfg.methods = m.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> drtarget::Result<()> {
    let cfg = load_config(&cli.global)?;
    let out: &Path = &cli.global.out_dir;
    match cli.command {
        Command::Ingest(a) => pipeline::ingest(&a.into(), &cfg, out),
        Command::Prep => pipeline::prep(&cfg, out),
        Command::Forecast => pipeline::forecast(&cfg, out),
        Command::Effects => pipeline::effects(&cfg, out),
        Command::Segment => pipeline::segment(&cfg, out),
        Command::Synth { recovery: true } => pipeline::recovery(&cfg, out),
        Command::Synth { recovery: false } => pipeline::synth(&cfg, out).map(|_| ()),
        Command::Report => pipeline::report(&cfg, out),
        Command::RunAll {
            meter,
            temperature,
            events,
            flags,
        } => {
            let inputs = match (meter, temperature, events, flags) {
                (Some(meter), Some(temperature), Some(events), Some(flags)) => Some(Inputs {
                    meter,
                    temperature,
                    events,
                    flags,
                }),
                _ => None,
            };
            pipeline::run_all(inputs.as_ref(), &cfg, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
