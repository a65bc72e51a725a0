use std::process::ExitCode;

fn main() -> ExitCode {
    grownet::cli::run()
}
