use std::process::ExitCode;

fn main() -> ExitCode {
    isodroop::cli::main_with_args(std::env::args_os())
}
