use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(labelsift::cli::run(std::env::args()))
}
