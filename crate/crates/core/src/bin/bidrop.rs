use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bidrop::protocol::{emit_protocol, run_protocol, ProtocolName};
use bidrop::train::{run_experiment, RunOptions};
use bidrop::{emit_report, verify, Error, TrainConfig};

#[derive(Parser)]
#[command(
    name = "bidrop",
    version,
    about = "Selective sub-net training with dropout-perturbed gradient scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one configuration and write report.json / report.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Expand a base configuration over a protocol grid and compare cells.
    Protocol {
        #[arg(long)]
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property suite.
    Verify {
        /// Also run the noisy-XOR trend comparison.
        #[arg(long)]
        trend: bool,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_usage() { 1 } else { 2 })
}

fn load(path: &Path) -> Result<TrainConfig, Error> {
    let cfg = TrainConfig::from_file(path)?;
    cfg.validate()?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn run(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let report = run_experiment(
                &cfg,
                &RunOptions {
                    out_dir: Some(out.clone()),
                },
            )?;
            let (json, csv) = emit_report(&report, &out)?;
            for (name, agg) in &report.aggregates {
                println!(
                    "{name:<16} mean {:.4}  std {:.4}  max {:.4}",
                    agg.mean, agg.std, agg.max
                );
            }
            println!("wrote {} and {}", json.display(), csv.display());
            Ok(true)
        }
        Command::Protocol { name, config, out } => {
            let protocol: ProtocolName = name.parse()?;
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("protocol-{protocol}")));
            let report = run_protocol(
                protocol,
                &cfg,
                &RunOptions {
                    out_dir: Some(out.clone()),
                },
            )?;
            emit_protocol(&report, &out)?;
            print!("{}", report.render_table());
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Verify { trend } => {
            let results = verify::run_all();
            for r in &results {
                println!("{}", r.line());
            }
            let mut ok = results.iter().all(|r| r.passed);
            if trend {
                let t = verify::soft_trend(10, 2000)?;
                let pass = t.gap >= -0.01;
                println!(
                    "[{}] trend: bidrop-full {:.4} vs full-net {:.4}, gap {:+.4}",
                    if pass { "PASS" } else { "FAIL" },
                    t.bidrop_accuracy,
                    t.vanilla_accuracy,
                    t.gap
                );
                ok &= pass;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => fail(&e),
    }
}
