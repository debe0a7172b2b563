//! `topsum`: train and run the topic-aware summarization pipeline.
//!
//! Subcommands follow the pipeline order: `lda-train` extracts the topic
//! vocabulary and embeddings, `train` fits the model by maximum
//! likelihood, `rl-finetune` continues with self-critical fine-tuning,
//! `summarize` decodes new documents, and `evaluate` scores summaries.
//!
//! Exit codes: 0 on success (including a learning-rate-floor stop), 1 for
//! configuration or input validation problems, 2 for failures after work
//! has started.

use std::process::ExitCode;

use clap::Parser;

use topsum_cli::args::{Cli, Command};
use topsum_cli::cmd;

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::LdaTrain(args) => cmd::lda_train(args),
        Command::Train(args) => cmd::train(args),
        Command::RlFinetune(args) => cmd::rl_finetune(args),
        Command::Summarize(args) => cmd::summarize(args),
        Command::Evaluate(args) => cmd::evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
