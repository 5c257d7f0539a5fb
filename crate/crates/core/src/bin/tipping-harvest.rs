use std::process::ExitCode;

fn main() -> ExitCode {
    tipping_harvest::cli::main_with_args(std::env::args_os())
}
