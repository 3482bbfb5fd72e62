use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hardy_cli::{parse_config, render_manifest, run, EXIT_CONFIG};

/// Output root override; replaces the config file's directory.
const OUTPUT_ROOT_VAR: &str = "HARDYLAB_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "hardylab", version, about = "Optimal Hardy weights: scenarios, fields and verification reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run { config: PathBuf },
    /// Parse and validate a scenario without running it.
    Validate { config: PathBuf },
    /// Pretty-print a run manifest and its reports.
    Report { manifest: PathBuf },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match parse_config(&config) {
            Ok(c) => {
                println!("ok {} ({:?})", c.hash, c.pipeline);
                code(0)
            }
            Err(e) => {
                eprint!("{e}");
                code(EXIT_CONFIG)
            }
        },
        Command::Run { config } => {
            let c = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprint!("{e}");
                    return code(EXIT_CONFIG);
                }
            };
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
            let dir = hardy_cli::run::output_dir(&c, &config, root.as_deref());
            match run(&c, &dir) {
                Ok(m) => {
                    for s in &m.checks {
                        println!("{:<28} {}", s.name, if s.pass { "PASS" } else { "FAIL" });
                    }
                    println!("{} -> {}", m.status, dir.join("manifest.json").display());
                    code(m.exit_code)
                }
                Err(e) => {
                    eprintln!("{e}");
                    code(hardy_cli::EXIT_CONSTRUCTION)
                }
            }
        }
        Command::Report { manifest } => match render_manifest(&manifest) {
            Ok(s) => {
                print!("{s}");
                code(0)
            }
            Err(e) => {
                eprintln!("{}: {e}", manifest.display());
                code(EXIT_CONFIG)
            }
        },
    }
}
