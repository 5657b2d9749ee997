use clap::Parser;

use reshmm::cli::{init_workers, run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    if let Err(e) = init_workers().and_then(|_| run(cli)) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
