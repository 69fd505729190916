use clap::Parser;

fn main() -> std::process::ExitCode {
    match idf_align_cli::run(idf_align_cli::Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
