use clap::Parser;
use stepvis_cli::args::Cli;
use stepvis_cli::commands;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = commands::run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
