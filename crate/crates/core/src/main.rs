use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use side::cli::{self, CliError};
use side::config::{Backend, RunConfig, StateTag};

#[derive(Parser)]
#[command(name = "side", version, about = "Drought severity and societal impact forecasting")]
struct Args {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Topic-to-determinant mapping backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Tag used to name the run directory.
    #[arg(long, global = true, value_enum)]
    state: Option<StateArg>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the weekly impact series from the text corpora.
    Quantify,
    /// Train a model and save its checkpoint.
    Train,
    /// Score the checkpoint and baselines on the test split.
    Evaluate,
    /// Train and score every ablation variant.
    Ablate,
    /// Write a synthetic dataset.
    Synth {
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Write plot-ready CSVs from an evaluated run.
    ExportPlots {
        /// Run directory; defaults to the configured one.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Llm,
    Lexicon,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Ca,
    Tx,
    Synth,
}

fn resolve(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(b) = args.backend {
        cfg.backend = match b {
            BackendArg::Llm => Backend::Llm,
            BackendArg::Lexicon => Backend::Lexicon,
        };
    }
    if let Some(s) = args.state {
        cfg.state = match s {
            StateArg::Ca => StateTag::Ca,
            StateArg::Tx => StateTag::Tx,
            StateArg::Synth => StateTag::Synth,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: Args) -> Result<(), CliError> {
    let cfg = resolve(&args)?;
    match args.command {
        Command::Quantify => {
            let path = cli::cmd_quantify(&cfg)?;
            println!("{}", path.display());
        }
        Command::Train => {
            let path = cli::cmd_train(&cfg)?;
            println!("{}", path.display());
        }
        Command::Evaluate => {
            let path = cli::cmd_evaluate(&cfg)?;
            println!("{}", path.display());
        }
        Command::Ablate => {
            let path = cli::cmd_ablate(&cfg)?;
            println!("{}", path.display());
        }
        Command::Synth { out } => {
            cli::cmd_synth(&cfg, &out)?;
            println!("{}", out.display());
        }
        Command::ExportPlots { run } => {
            let dir = run.unwrap_or_else(|| cli::run_dir(&cfg));
            let (sev, bars) = cli::cmd_export_plots(&cfg, &dir)?;
            println!("{}\n{}", sev.display(), bars.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
