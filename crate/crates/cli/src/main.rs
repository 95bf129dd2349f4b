mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn out_path(cmd: &Command) -> Option<&std::path::Path> {
    let p = match cmd {
        Command::Summarize(a) => &a.out.out,
        Command::Crossing(a) => &a.out.out,
        Command::Trend(a) => &a.out.out,
        Command::Att(a) => &a.out.out,
        Command::Qtt(a) => &a.out.out,
        Command::Ame(a) => &a.out.out,
        Command::Bounds(a) => &a.out.out,
        Command::Rc(a) => &a.out.out,
        Command::FitQ(a) => &a.out.out,
        Command::Dominance(a) => &a.out.out,
        Command::Simulate(a) => &a.out,
        Command::Bootstrap(a) => &a.out,
    };
    p.as_deref()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = commands::run(&cli.command)
        .and_then(|out| output::emit(out_path(&cli.command), &out, &argv, &cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("contdid: error {e}");
            ExitCode::from(2)
        }
    }
}
