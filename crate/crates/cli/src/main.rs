use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(longtile_cli::run(std::env::args_os()))
}
