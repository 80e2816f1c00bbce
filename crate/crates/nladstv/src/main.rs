use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(nladstv::cli::run() as u8)
}
