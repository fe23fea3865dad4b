use std::io::{self, IsTerminal, Write};
use std::process::ExitCode;

use clap::Parser;
use ims_cli::{run, Cli, Command, UserCommand};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    if matches!(cli.command, Command::User(UserCommand::Add { .. })) && io::stdin().is_terminal() {
        eprint!("password: ");
        let _ = io::stderr().flush();
    }
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let mut out = io::stdout();
    match run(cli, &mut input, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
