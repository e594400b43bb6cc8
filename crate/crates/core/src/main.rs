use std::process::ExitCode;

fn main() -> ExitCode {
    regtrack::cli::main_with_args(std::env::args_os())
}
