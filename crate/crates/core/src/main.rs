use clap::Parser;
use graphflow::cli::{init_threads, run, Cli};

fn main() {
    let cli = Cli::parse();
    init_threads();
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}
