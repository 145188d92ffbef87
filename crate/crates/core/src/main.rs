use clap::Parser;

use flarereg::cli::{error_record, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{}", error_record(&e));
        std::process::exit(1);
    }
}
