use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obslab::config::{parse_config, ConfigError, Scenario};
use obslab::runner::{execute_all, prepare_all, rerender, write_outputs, Prepared};

#[derive(Parser)]
#[command(name = "obslab", version, about = "Run observability and control scenarios and emit CSV/SVG reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and run every scenario of a config file.
    Run {
        config: PathBuf,
        /// Output directory (default: `out/<config stem>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Re-render SVG plots from the CSVs in an output directory.
    Report { dir: PathBuf },
}

fn load(path: &Path) -> Result<(Vec<Scenario>, Vec<Prepared>), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(0, "file", format!("{}: {e}", path.display())))?;
    let scenarios = parse_config(&text)?;
    let prepared = prepare_all(&scenarios)?;
    Ok((scenarios, prepared))
}

fn jobs() -> Result<usize, String> {
    match std::env::var("OBSLAB_JOBS") {
        Ok(v) => v.trim().parse().map_err(|_| format!("OBSLAB_JOBS must be a non-negative integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}

fn run(config: &Path, out: Option<PathBuf>) -> ExitCode {
    let (scenarios, prepared) = match load(config) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    let jobs = match jobs() {
        Ok(j) => j,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = out.unwrap_or_else(|| {
        let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from("out").join(stem)
    });
    let results = execute_all(&prepared, jobs);
    if let Err(e) = write_outputs(&dir, &results) {
        eprintln!("cannot write outputs to {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    let mut failed = 0;
    for (s, r) in scenarios.iter().zip(&results) {
        match r {
            Ok(_) => println!("ok    {} ({})", s.id, s.task),
            Err(e) => {
                failed += 1;
                eprintln!("error {e}");
            }
        }
    }
    println!("{} scenarios, {} failed, outputs in {}", scenarios.len(), failed, dir.display());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Validate { config } => match load(&config) {
            Ok((scenarios, _)) => {
                println!("{}: {} scenarios valid", config.display(), scenarios.len());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {}: {e}", config.display());
                ExitCode::from(2)
            }
        },
        Command::Report { dir } => match rerender(&dir) {
            Ok(names) => {
                for n in names {
                    println!("wrote {}", dir.join(n).display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("cannot re-render {}: {e}", dir.display());
                ExitCode::from(1)
            }
        },
    }
}
