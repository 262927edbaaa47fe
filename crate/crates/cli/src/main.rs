use std::process::ExitCode;

fn main() -> ExitCode {
    fcanet_cli::main_with(std::env::args_os())
}
