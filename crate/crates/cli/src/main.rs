use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedact::config::{parse_config, Architecture, Detector};
use fedact::{emit_results, macs, run_experiment};

#[derive(Parser)]
#[command(name = "fedact", version, about = "Federated activity detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured detectors, writing plot-ready results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of fl,ista,fista,amp.
        #[arg(long)]
        detectors: Option<String>,
        #[arg(long)]
        arch: Option<String>,
    },
    /// Parse and validate a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the multiply-accumulate cost table.
    Macs {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match parse_config(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
        Command::Macs { config } => match parse_config(&config) {
            Ok(cfg) => {
                print!("{}", macs::render(&macs::mac_table(&cfg)));
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
        Command::Run {
            config,
            seed,
            out,
            detectors,
            arch,
        } => {
            let mut cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if let Some(seed) = seed {
                cfg.scenario.master_seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(list) = detectors {
                let parsed: Option<Vec<Detector>> = list.split(',').map(Detector::parse).collect();
                match parsed {
                    Some(d) if !d.is_empty() => cfg.detectors = d,
                    _ => return config_error(format!("invalid --detectors `{list}`")),
                }
            }
            if let Some(a) = arch {
                match Architecture::parse(&a) {
                    Some(a) => cfg.architecture = a,
                    None => return config_error(format!("invalid --arch `{a}`")),
                }
            }
            if let Err(e) = cfg.validate() {
                return config_error(e);
            }
            let bundle = match run_experiment(&cfg) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("runtime error: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            for d in &bundle.detectors {
                println!("{:<6} {:<10} auc={:.6}", d.detector.name(), bundle.architecture.name(), d.roc.auc);
            }
            match emit_results(&bundle, &cfg, &cfg.output_dir) {
                Ok(files) => {
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("runtime error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
    }
}
