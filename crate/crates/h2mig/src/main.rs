use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(h2mig::cli::cli_main(std::env::args()))
}
