//! The `kmat` command line: synthetic data generation, multi-seed training,
//! component ablation and evaluation of stored parameters.

pub mod ablate;
pub mod artifacts;
pub mod error;
pub mod eval;
pub mod files;
pub mod gen;
pub mod train;

use clap::{Parser, Subcommand};

pub use ablate::{cmd_ablate, AblateArgs};
pub use artifacts::{ParamsDump, RunManifest};
pub use error::{CliError, CliResult};
pub use eval::{cmd_eval, EvalArgs, EvalReport};
pub use gen::{cmd_gen, GenArgs};
pub use train::{cmd_train, TrainArgs};

#[derive(Parser, Debug)]
#[command(
    name = "kmat",
    version,
    about = "Cross-modal prompt tuning with anchored transport alignment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a synthetic embedding fixture.
    Gen(GenArgs),
    /// Trains over every seed and writes reports, parameters and a manifest.
    Train(TrainArgs),
    /// Runs the component ablation grid.
    Ablate(AblateArgs),
    /// Scores stored parameters on a data split.
    Eval(EvalArgs),
}

/// Runs one command and returns what it prints.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Gen(args) => {
            let out = cmd_gen(args)?;
            Ok(gen::format_counts(&out.counts))
        }
        Command::Train(args) => {
            let out = cmd_train(args)?;
            Ok(format!(
                "{}wrote {}\n",
                train::format_summary(&out.reports, &out.summary),
                out.out_dir.join(train::MANIFEST_FILE).display()
            ))
        }
        Command::Ablate(args) => {
            let out = cmd_ablate(args)?;
            Ok(ablate::table_text(&out.rows))
        }
        Command::Eval(args) => Ok(eval::format_eval(&cmd_eval(args)?)),
    }
}
