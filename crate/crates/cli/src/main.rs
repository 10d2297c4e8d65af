use clap::Parser;
use ssmreserve_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => print!("{out}"),
        Err(f) => {
            eprintln!("error: {f}");
            std::process::exit(f.code);
        }
    }
}
