use clap::Parser;
use kubo_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("kubo: {e}");
        std::process::exit(e.exit_code());
    }
}
