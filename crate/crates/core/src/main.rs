use std::process::ExitCode;

fn main() -> ExitCode {
    hierdrive::cli::main_with(std::env::args_os())
}
