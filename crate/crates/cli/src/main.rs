use std::process::ExitCode;

fn main() -> ExitCode {
    csiloc_cli::run_command(std::env::args_os())
}
