use clap::Parser;
use miracle_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    if let Err(e) = execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
