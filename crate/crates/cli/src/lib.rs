//! The `drise` command line. Each subcommand is also callable as a function
//! taking its parsed arguments.

pub mod args;
mod dataset;
mod error;
mod explain;
pub mod render;
mod setup;
mod tools;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::Cli;
pub use dataset::{cmd_aggregate, cmd_eval, AggregateMeta, EvalSummary};
pub use error::CliError;
pub use explain::{cmd_explain, ExplainMeta};
pub use tools::{cmd_bias_inject, cmd_synth_dataset, cmd_synth_detector};

use args::Command;

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim_start_matches("error: ").trim_end().to_string())),
    };
    match cli.command {
        Command::Explain(a) => cmd_explain(&a).map(drop),
        Command::Eval(a) => cmd_eval(&a).map(drop),
        Command::Aggregate(a) => cmd_aggregate(&a).map(drop),
        Command::BiasInject(a) => cmd_bias_inject(&a).map(drop),
        Command::SynthDetector(a) => cmd_synth_detector(&a),
        Command::SynthDataset(a) => cmd_synth_dataset(&a).map(drop),
    }
}

/// Logging to stderr at the level in `DRISE_LOG` (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::default().filter_or("DRISE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
