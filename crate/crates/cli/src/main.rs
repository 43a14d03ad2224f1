use clap::Parser;
use dyncal_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("dyncal: {e}");
        std::process::exit(e.exit_code());
    }
}
