use std::process::ExitCode;

use clap::Parser;
use lanegeom_cli::{error_json, expand_config_flags, run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LANEGEOM_LOG", "warn")).init();
    let cli = Cli::parse_from(expand_config_flags(std::env::args().collect()));
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
