use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gatekeep_core::dynamics::PolicyKind;
use gatekeep_core::experiment::emit::{self, RUNS_FILE, SUMMARY_FILE};
use gatekeep_core::experiment::{aggregate, run_and_emit, ExperimentConfig, Headline};
use gatekeep_core::Error;

#[derive(Parser)]
#[command(name = "gatekeep", version, about = "Risk-gated multi-agent highway experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-step vehicle states to trajectories.jsonl.
    #[arg(long)]
    dump_trajectories: bool,
    /// Write per-evaluation gatekeeper estimates to risk.jsonl.
    #[arg(long)]
    dump_risk: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Defensive,
    Hotshot,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Run a fixed-policy baseline with no gatekeepers.
    Baseline {
        #[arg(long, value_enum)]
        policy: Baseline,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Recompute summary.json and timeseries.csv from a previous run's runs.jsonl.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a config, then print it with defaults filled in.
    ValidateConfig { file: PathBuf },
}

/// Exit status 1 for bad input, 2 for failures while running.
enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

/// Any failure to read or check the config file is a config error.
fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_file(path).map_err(Failure::Config)
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.dump_trajectories |= args.dump_trajectories;
    config.dump_risk |= args.dump_risk;
    Ok(config)
}

fn report(headline: &Headline, dir: &Path) {
    println!(
        "worlds {}  tracked-ego crashes {} ({:.3})  mean loss {:.4}  defensive fraction {:.3}  evaluations {}",
        headline.n_worlds,
        headline.total_crashes,
        headline.crash_fraction,
        headline.mean_loss,
        headline.mean_defensive_fraction,
        headline.gatekeeper_evaluations,
    );
    println!("wrote {}", dir.display());
}

fn execute(config: ExperimentConfig) -> Result<(), Failure> {
    config.validate().map_err(Failure::Config)?;
    let dir = config.output_dir.clone();
    let (records, _) = run_and_emit(&config, &dir)?;
    report(&emit::headline(&records), &dir);
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => execute(load(&args)?),
        Command::Baseline { policy, run } => {
            let mut config = load(&run)?;
            config.baseline_policy = Some(match policy {
                Baseline::Defensive => PolicyKind::Defensive,
                Baseline::Hotshot => PolicyKind::Hotshot,
            });
            config.n_online = 0;
            execute(config)
        }
        Command::Aggregate { input, out } => {
            let summary = emit::read_summary(&input.join(SUMMARY_FILE)).map_err(Failure::Runtime)?;
            let records = emit::read_runs(&input.join(RUNS_FILE)).map_err(Failure::Runtime)?;
            let stats = aggregate(&records, summary.config.interval())?;
            emit::emit(&stats, &records, &summary.config, &out)?;
            report(&emit::headline(&records), &out);
            Ok(())
        }
        Command::ValidateConfig { file } => {
            let config = read_config(&file)?;
            println!("{}", config.to_json_pretty());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
