use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    drise_cli::init_logging();
    match panic::catch_unwind(|| drise_cli::run(std::env::args_os())) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("drise: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        // the panic hook has already printed the message
        Err(_) => ExitCode::from(3),
    }
}
