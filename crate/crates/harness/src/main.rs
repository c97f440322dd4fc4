use clap::Parser;
use decoy_harness::cli::{execute, Cli, EXIT_CONFIG};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage problems count as config errors; --help and --version do not
            std::process::exit(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(out) => print!("{out}"),
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            std::process::exit(failure.exit_code());
        }
    }
}
