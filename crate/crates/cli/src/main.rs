use std::path::PathBuf;
use std::process::ExitCode;

use aedsim_core::harness::{self, parse_config, write_outputs, Experiment};
use aedsim_core::AedError;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aedsim", version, about = "Adaptive evolutionary defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write log.json, kpi.csv and policies.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize one or more log.json files.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Parse a config and print it with every default filled in.
    ValidateConfig { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), AedError> {
    let mut cfg = parse_config(&config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    let total = cfg.max_epochs;
    let dir = cfg.output_dir.clone();
    eprintln!(
        "running {} for {total} epochs, seed {}",
        cfg.scenario.as_str(),
        cfg.master_seed
    );
    let mut exp = Experiment::new(cfg)?;
    while let Some(r) = exp.step()? {
        let attacked = r.attacked_acc.map_or("-".to_string(), |a| format!("{a:.4}"));
        eprintln!(
            "epoch {:>3}/{total}  {:<12}  clean {:.4}  attacked {attacked}  phase {}  policy {}",
            r.epoch,
            r.mode.as_str(),
            r.clean_acc,
            r.attacker_phase,
            r.policy_id
        );
    }
    let log = exp.into_log();
    write_outputs(&log, &dir)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), AedError> {
    match cli.command {
        Command::Run { config, seed, out } => run(config, seed, out),
        Command::Report { logs, format } => {
            let rep = harness::report(&logs)?;
            match format {
                Format::Text => print!("{}", rep.to_text()),
                Format::Json => println!("{}", rep.to_json()),
            }
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg = parse_config(&config)?;
            print!("{}", cfg.to_toml()?);
            eprintln!("{}: ok", config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
