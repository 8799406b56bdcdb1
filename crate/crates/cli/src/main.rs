mod args;
mod design;
mod estimate;
mod output;
mod sample;
mod simulate;
mod truth;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

fn long_version() -> &'static str {
    let features = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let text = format!(
        "{} (features: {features}; {profile}; {}/{})",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH
    );
    Box::leak(text.into_boxed_str())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Estimate(a) => estimate::run(a),
        Command::Design(a) => design::run(a),
        Command::Sample(a) => sample::run(a),
        Command::Truth(a) => truth::run(a),
        Command::Simulate(a) => simulate::run(a),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command()
        .version(env!("CARGO_PKG_VERSION"))
        .long_version(long_version())
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(output::exit_code(&e))
        }
    }
}
