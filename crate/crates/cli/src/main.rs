use std::process::ExitCode;

fn main() -> ExitCode {
    stein_bridge_cli::main_with_args(std::env::args_os())
}
