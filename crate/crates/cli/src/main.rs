mod cli;
mod commands;
mod config;
mod error;

use clap::Parser;

use cli::{Cli, Command, Experiment};
use config::ConfigFile;
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(args) => commands::simulate_cmd(args, cfg),
        Command::Estimate(args) => commands::estimate_cmd(args, cfg),
        Command::Experiment(Experiment::Ex1(args)) => commands::ex1_cmd(args, cfg),
        Command::Experiment(Experiment::Ex2(args)) => commands::ex2_cmd(args, cfg),
        Command::Experiment(Experiment::Ex3(args)) => commands::ex3_cmd(args, cfg),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
