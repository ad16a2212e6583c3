//! `shearmod`: forward solves, reconstructions, certificates and stability
//! experiments driven by TOML configs.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "shearmod", version, about = "Shear-modulus reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem for each excitation.
    Forward(CommonArgs),
    /// Projected Landweber reconstruction of μ.
    Reconstruct(CommonArgs),
    /// Ellipticity certificate for one (2D) or two (3D) displacement fields.
    Certify(CommonArgs),
    /// Empirical stability ratios over bump-perturbation pairs.
    Stability(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, f): (&CommonArgs, fn(&commands::Common) -> shearmod::Result<()>) = match &cli.command {
        Command::Forward(a) => (a, commands::forward),
        Command::Reconstruct(a) => (a, commands::reconstruct),
        Command::Certify(a) => (a, commands::certify),
        Command::Stability(a) => (a, commands::stability),
    };
    let common = commands::Common { config: &args.config, out: &args.out, seed: args.seed, quiet: args.quiet };
    match f(&common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            println!("{}", json!({ "kind": e.kind(), "message": e.to_string() }));
            ExitCode::from(2)
        }
    }
}
