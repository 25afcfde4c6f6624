use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = batchaudit_cli::Cli::parse();
    match batchaudit_cli::run(&cli) {
        Ok((report, path)) => {
            println!("{} finished in {:.2}s; report at {}", report.experiment, report.wall_time_secs, path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
