use std::io;

use clap::Parser;

fn main() {
    let cli = vofde_cli::Cli::parse();
    let code = vofde_cli::run(&cli, &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
