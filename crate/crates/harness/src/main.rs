use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use stno_harness::record::{default_out_dir, Status};
use stno_harness::{load_config, run_experiment, write_run, ExperimentConfig, ExperimentKind, HarnessError};

#[derive(Parser)]
#[command(name = "stno", about = "Spin-torque oscillator sensor experiments", disable_version_flag = true)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's `out`, else runs/<kind>-<run id>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and resolve a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the experiment kinds.
    ListExperiments,
    /// Print the version.
    Version,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    eprintln!("{}", Cli::command().render_usage());
    ExitCode::from(2)
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    if !path.is_file() {
        return Err(usage_error(&format!("config file `{}` not found", path.display())));
    }
    load_config(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, quiet: bool) -> Result<ExitCode, ExitCode> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let fail = |e: HarnessError| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    };
    let output = run_experiment(&cfg).map_err(fail)?;
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| default_out_dir(cfg.kind.name(), &output.config));
    let record = write_run(&output, &dir).map_err(fail)?;
    for f in &record.failures {
        log::warn!("{f}");
    }
    if !quiet {
        println!(
            "{} {} run_id={} status={}",
            record.kind,
            dir.display(),
            record.run_id,
            serde_json::to_value(record.status).map_or_else(|_| "?".into(), |v| v.as_str().unwrap_or("?").to_string())
        );
    }
    match record.status {
        Status::Failed => {
            eprintln!("error: every point of the experiment failed; see {}", dir.join("summary.json").display());
            Ok(ExitCode::from(1))
        }
        Status::Ok | Status::Partial => Ok(ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info })
        .parse_env("STNO_LOG")
        .init();
    let result = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out, cli.quiet),
        Command::Validate { config } => load(&config).map(|cfg| {
            if !cli.quiet {
                println!("ok: {} (seed {})", cfg.kind, cfg.seed);
            }
            ExitCode::SUCCESS
        }),
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<18} {}", k.name(), k.description());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Version => {
            println!("stno {}", env!("CARGO_PKG_VERSION"));
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|code| code)
}
