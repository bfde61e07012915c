mod args;
mod commands;
mod heatmap;
mod setup;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Finish;

const USAGE: u8 = 1;
const NOT_CONVERGED: u8 = 2;

fn run(cli: &Cli) -> anyhow::Result<Finish> {
    if let Some(n) = cli.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Rollout(a) => commands::rollout_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::Export(a) => commands::export(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(Finish::Ok) => ExitCode::SUCCESS,
        Ok(Finish::NotConverged) => ExitCode::from(NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            let diverged = matches!(e.downcast_ref::<reachavoid::Error>(), Some(reachavoid::Error::Diverged { .. }));
            ExitCode::from(if diverged { NOT_CONVERGED } else { USAGE })
        }
    }
}
