use std::process::ExitCode;

fn main() -> ExitCode {
    stagewise_lora::cli::run(std::env::args_os())
}
