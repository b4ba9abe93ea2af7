use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spafl::accounting::{gbit, spafl_comm_bits};
use spafl::config::{ConfigOverrides, ExperimentConfig};
use spafl::experiment::run_experiment;
use spafl::SpaflError;

#[derive(Parser)]
#[command(name = "spafl", version, about = "Federated learning with trainable pruning thresholds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics.csv, summary.json and mask images.
    Run {
        /// Flat JSON config file; command-line flags override its keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Print threshold-exchange communication totals.
    VerifyComm {
        #[arg(long, value_enum, default_value = "all")]
        preset: CommPreset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CommPreset {
    Fmnist,
    Cifar10,
    Cifar100,
    All,
}

/// (name, K, tau_num, T)
const COMM_SETTINGS: [(&str, u64, u64, u64); 3] = [
    ("fmnist", 10, 580, 500),
    ("cifar10", 10, 1418, 500),
    ("cifar100", 10, 4800, 1500),
];

fn verify_comm(preset: CommPreset) {
    let wanted = match preset {
        CommPreset::Fmnist => Some("fmnist"),
        CommPreset::Cifar10 => Some("cifar10"),
        CommPreset::Cifar100 => Some("cifar100"),
        CommPreset::All => None,
    };
    for (name, k, tau_num, rounds) in COMM_SETTINGS {
        if wanted.is_some_and(|w| w != name) {
            continue;
        }
        let bits = spafl_comm_bits(k, tau_num, rounds);
        println!(
            "{name}: K={k} tau_num={tau_num} T={rounds} bits={bits} gbit={:.4} exact_gbit={}",
            gbit(bits),
            gbit(bits)
        );
    }
}

fn run(config: Option<PathBuf>, overrides: ConfigOverrides) -> Result<(), SpaflError> {
    let file = match config {
        Some(path) => ConfigOverrides::from_file(&path)?,
        None => ConfigOverrides::default(),
    };
    let cfg = ExperimentConfig::resolve(file, overrides)?;
    let outcome = run_experiment(&cfg)?;
    let s = &outcome.summary;
    println!(
        "{}: best mean accuracy {} at round {}, final density {}, {} bits, {} FLOPs -> {}",
        s.strategy,
        s.best_mean_acc.map_or("n/a".into(), |a| format!("{a:.4}")),
        s.best_round.map_or("n/a".into(), |r| r.to_string()),
        s.final_density.map_or("n/a".into(), |d| format!("{d:.4}")),
        s.total_comm_bits,
        s.total_flops,
        cfg.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::VerifyComm { preset } => {
            verify_comm(preset);
            ExitCode::SUCCESS
        }
        Command::Run { config, overrides } => match run(config, overrides) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e @ SpaflError::Config(_)) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
