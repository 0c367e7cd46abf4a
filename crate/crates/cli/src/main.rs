use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use psiwalk::scenario::{self, RunMode, RunOptions, ScenarioConfig, ScenarioKind};

#[derive(Parser)]
#[command(name = "psiwalk", version, about = "Particles guided by a Ψ-field: scenarios, oracles, manifests")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario: Ψ evolution, Langevin ensemble, Smoluchowski oracle.
    Run(RunArgs),
    /// Run only the Smoluchowski side of a scenario.
    FpOnly(RunArgs),
    /// Run only the Langevin side of a scenario.
    EnsembleOnly(RunArgs),
    /// Check a configuration and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarise a finished run and verify its file checksums.
    Report {
        /// Output directory or manifest.json.
        path: PathBuf,
    },
    /// Print the default configuration of one scenario, or of all.
    Defaults { scenario: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_THRESHOLDS: u8 = 2;

fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(scenario::parse_config(&text)?)
}

fn run(args: &RunArgs, mode: RunMode) -> Result<ExitCode> {
    let mut config = load(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let opts = RunOptions {
        out_dir: args.out.clone(),
        workers: args.workers,
        mode,
    };
    let manifest = scenario::run_scenario(&config, &opts)
        .with_context(|| format!("running scenario {}", config.scenario))?;
    print!("{}", manifest.summary());
    let dir = args.out.as_ref().unwrap_or(&config.output_dir);
    println!("manifest: {}", dir.join(scenario::manifest::MANIFEST_NAME).display());
    Ok(if manifest.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_THRESHOLDS)
    })
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(a) => run(&a, RunMode::Full),
        Command::FpOnly(a) => run(&a, RunMode::FpOnly),
        Command::EnsembleOnly(a) => run(&a, RunMode::EnsembleOnly),
        Command::Validate { config } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            match scenario::validate_config(&text) {
                Ok(c) => {
                    println!("{}", c.to_json()?);
                    Ok(ExitCode::SUCCESS)
                }
                Err(issues) => {
                    for i in issues {
                        eprintln!("{i}");
                    }
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Report { path } => {
            let report = scenario::report(&path)?;
            print!("{}", report.render());
            Ok(if !report.checksums_ok() {
                ExitCode::FAILURE
            } else if report.manifest.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_THRESHOLDS)
            })
        }
        Command::Defaults { scenario: name } => {
            match name {
                Some(n) => {
                    let kind = ScenarioKind::from_name(&n).with_context(|| {
                        let names: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                        format!("unknown scenario {n:?}; expected one of {}", names.join(", "))
                    })?;
                    println!("{}", ScenarioConfig::defaults(kind).to_json()?);
                }
                None => println!("{}", serde_json::to_string_pretty(&scenario::defaults_table())?),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
