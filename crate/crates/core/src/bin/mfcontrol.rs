use std::process::ExitCode;

fn main() -> ExitCode {
    mfcontrol::cli::main_with_args(std::env::args_os())
}
