use std::process::ExitCode;

use clap::Parser;
use structmem::cli::{self, Cli};

fn main() -> ExitCode {
    cli::run(Cli::parse())
}
