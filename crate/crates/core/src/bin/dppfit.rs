use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dppfit::studio::cli(std::env::args()) as u8)
}
