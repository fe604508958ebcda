use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use harmonic_patchwork::scenario::{
    bundled, config_hash, run_scenario, validate_config, RunOptions, Scenario, BUNDLED,
};

#[derive(Parser)]
#[command(
    name = "harmonic-patchwork",
    version,
    about = "Checks on maxima of harmonic functions and their piecewise-analytic fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or a bundled scenario by name) and write report.json.
    Run {
        config: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Seed for the randomized checks; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and check a scenario without running it.
    Validate { config: String },
    /// List the bundled scenarios.
    ListExamples,
}

fn load(config: &str) -> Result<(String, Scenario), ExitCode> {
    let raw = match fs::read_to_string(config) {
        Ok(raw) => raw,
        Err(e) => match bundled(config) {
            Some(text) => text.to_string(),
            None => {
                eprintln!("cannot read {config}: {e}");
                return Err(ExitCode::from(2));
            }
        },
    };
    match validate_config(&raw) {
        Ok(s) => Ok((raw, s)),
        Err(e) => {
            eprintln!("invalid config {config}: {e}");
            Err(ExitCode::from(2))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::ListExamples => {
            for (name, text) in BUNDLED {
                let description = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v["description"].as_str().map(str::to_owned))
                    .unwrap_or_default();
                println!("{name}\t{description}");
            }
            ExitCode::SUCCESS
        }
        Cmd::Validate { config } => match load(&config) {
            Ok((_, s)) => {
                println!("ok: {} members, {} commands", s.family.members.len(), s.commands.len());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Cmd::Run { config, out_dir, seed } => {
            let (raw, scenario) = match load(&config) {
                Ok(v) => v,
                Err(code) => return code,
            };
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from("."));
            if let Err(e) = fs::create_dir_all(&out_dir) {
                eprintln!("cannot create {}: {e}", out_dir.display());
                return ExitCode::from(3);
            }
            let options = RunOptions {
                out_dir: Some(out_dir.clone()),
                seed,
            };
            let report = match run_scenario(&scenario, &config_hash(&raw), &options) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("invalid config {config}: {e}");
                    return ExitCode::from(2);
                }
            };
            for c in &report.commands {
                let verdict = match c.verdict {
                    Some(true) => "pass",
                    Some(false) => "FAIL",
                    None => "-",
                };
                let status = serde_json::to_value(c.status).unwrap();
                print!(
                    "{:>3} {:<20} {:<8} {verdict}",
                    c.index,
                    c.command,
                    status.as_str().unwrap_or("")
                );
                if let Some(m) = &c.message {
                    print!("  ({m})");
                }
                println!();
            }
            let path = out_dir.join("report.json");
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Err(e) = fs::write(&path, text + "\n") {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::from(3);
            }
            println!("report: {}", path.display());
            ExitCode::from(report.exit_code() as u8)
        }
    }
}
