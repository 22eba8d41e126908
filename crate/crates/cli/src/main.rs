use std::process::ExitCode;

fn main() -> ExitCode {
    tdo_cli::run(std::env::args_os())
}
