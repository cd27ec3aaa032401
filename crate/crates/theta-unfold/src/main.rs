use clap::Parser;

use theta_unfold::cli::{run, Cli};

fn main() {
    let code = run(Cli::parse());
    std::process::exit(code);
}
