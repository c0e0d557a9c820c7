use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(kacflow_cli::run(std::env::args_os()))
}
