use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mmgcn_cli::run(std::env::args_os()))
}
