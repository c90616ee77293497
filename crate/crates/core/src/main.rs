use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(toxivec::cli::run(std::env::args_os()))
}
