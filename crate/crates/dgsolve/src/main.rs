use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dgsolve::cli::run(std::env::args()) as u8)
}
