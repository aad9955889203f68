use clap::Parser;

use edgeunet::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let msg = e.to_string().replace('\n', " ");
        eprintln!("error[{}]: {}", e.kind(), msg);
        std::process::exit(e.exit_code());
    }
}
