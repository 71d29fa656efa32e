use std::process::ExitCode;

fn main() -> ExitCode {
    dlgain::harness::cli::main()
}
