use clap::{Parser, Subcommand};
use ocs::cli_runner::{exit_code, list_experiments, prepare, run, RunOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Batch runner for one-channel operator experiments.
#[derive(Parser)]
#[command(name = "ocs", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config and write CSVs plus a manifest.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Print the experiment kinds with their fields and example configs.
    List,
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = matches!(cli.cmd, Cmd::Run { verbose: true, .. });
    env_logger::Builder::new()
        .filter_level(if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    let result = match cli.cmd {
        Cmd::Run { config, out, threads, .. } => run(&config, &RunOptions { out, threads }).map(|o| {
            println!("{} -> {}", o.manifest.kind, o.out_dir.display());
            println!("{}", serde_json::to_string(&o.manifest.summary).unwrap_or_default());
        }),
        Cmd::List => {
            for info in list_experiments() {
                println!("{}\n  {}", info.kind, info.description);
                println!("  required: {}", info.required.join(", "));
                if !info.defaults.is_empty() {
                    let d: Vec<String> = info.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    println!("  defaults: {}", d.join(", "));
                }
                println!("  outputs: {}", info.outputs.join(", "));
                println!("  example: {}\n", info.example);
            }
            Ok(())
        }
        Cmd::Validate { config } => std::fs::read_to_string(&config)
            .map_err(|e| ocs::OcsError::config(".", format!("cannot read {}: {e}", config.display())))
            .and_then(|text| prepare(&text, config.parent().unwrap_or(Path::new("."))))
            .map(|p| println!("ok: {}", p.config.experiment.kind())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
