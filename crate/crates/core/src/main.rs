use std::process::ExitCode;

use clap::Parser;
use gridfloor::cli::{run, Cli};
use gridfloor::config::SEED_ENV;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // usage errors exit with status 2 inside parse()
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    match run(cli, env_seed.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
