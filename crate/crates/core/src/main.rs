use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(stokeszero::cli::main_with(std::env::args_os()))
}
