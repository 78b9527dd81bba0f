use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prefsel_cli::{cmd_eval, cmd_generate, cmd_rerank, cmd_select, cmd_train, CommonArgs};

#[derive(Parser)]
#[command(name = "prefsel", version, about = "Preference data selection and progressive reward-model training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic text/caption/visual suite with ground truth.
    Generate(Flags),
    /// Select caption data against visual data, then text against the selected captions.
    Select(Flags),
    /// Train on text, caption and visual data in turn.
    Train(Flags),
    /// Pick the highest-reward candidate in each set.
    Rerank(Flags),
    /// Held-out accuracy, loss curves and win rates.
    Eval(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
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
    let (run, f): (fn(&CommonArgs) -> _, Flags) = match cli.command {
        Command::Generate(f) => (cmd_generate, f),
        Command::Select(f) => (cmd_select, f),
        Command::Train(f) => (cmd_train, f),
        Command::Rerank(f) => (cmd_rerank, f),
        Command::Eval(f) => (cmd_eval, f),
    };
    let args = CommonArgs {
        config: f.config,
        seed: f.seed,
        jobs: f.jobs,
        out: f.out,
    };
    match run(&args) {
        Ok(_) => {
            if let Ok(log) = std::fs::read_to_string(args.out.join("log.txt")) {
                eprint!("{log}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
