use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdpp_cli::commands::{self, Context};
use tdpp_cli::{CliError, ExperimentConfig, Overrides};
use tdpp_core::Arch;

#[derive(Parser)]
#[command(name = "tdpp", version, about = "Permutation-protected crossbar DNN experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_arch)]
    arch: Option<Arch>,
    #[arg(long, global = true)]
    bn_ports: Option<usize>,
    #[arg(long, global = true, value_parser = ["1", "2", "4", "8"])]
    device_precision: Option<String>,
    #[arg(long, global = true)]
    tiles: Option<usize>,
    /// Trials per measurement [default: 40].
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Hex user key XORed into the buffer key bits.
    #[arg(long, global = true, env = "TDPP_USER_KEY", hide_env_values = true)]
    user_key: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the dataset, train and quantize the model.
    Prepare,
    /// Map a model onto protected crossbars.
    Protect {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Read weights back from a crossbar dump.
    Extract {
        /// Undo the permutation with the regenerated keys.
        #[arg(long)]
        with_key: bool,
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        architecture: Option<PathBuf>,
    },
    /// Effectiveness, brute-force and divide-and-conquer analyses.
    Attack {
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Hardware cost comparison tables.
    Overhead,
    /// Key sizes and security summary for the configuration.
    Report,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: tdpp_core::Error| e.to_string())
}

fn run(cli: Cli) -> Result<String, CliError> {
    let g = cli.global;
    let mut cfg = ExperimentConfig::load(g.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: g.seed,
        arch: g.arch,
        bn_ports: g.bn_ports,
        device_precision: g.device_precision.map(|p| p.parse().expect("validated by clap")),
        tiles: g.tiles,
        trials: g.trials,
        out: g.out,
    });
    let ctx = Context::new(cfg, g.user_key.as_deref())?;
    match cli.cmd {
        Cmd::Prepare => commands::prepare(&ctx),
        Cmd::Protect { model } => commands::protect(&ctx, model.as_deref()),
        Cmd::Extract {
            with_key,
            mapping,
            architecture,
        } => commands::extract(&ctx, mapping.as_deref(), architecture.as_deref(), with_key),
        Cmd::Attack {
            mapping,
            model,
            dataset,
        } => commands::attack(&ctx, mapping.as_deref(), model.as_deref(), dataset.as_deref()),
        Cmd::Overhead => commands::overhead(&ctx),
        Cmd::Report => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
