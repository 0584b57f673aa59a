use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(e) = c3gnn::analysis::init_threads_from_env() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(c3gnn_cli::run_command(std::env::args_os()) as u8)
}
