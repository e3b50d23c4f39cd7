use clap::Parser;

use ct_cli::{run, Cli, EXIT_INPUT, EXIT_OK};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors share the bad-input status; exit 2 means no convergence
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(&cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("ct: {e:#}");
            EXIT_INPUT
        }
    };
    std::process::exit(code);
}
