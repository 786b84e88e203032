use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let outcome = berk_nash::cli::execute(&args);
    if outcome.exit_code == 0 {
        println!("{}", outcome.summary);
    } else {
        eprintln!("{}", outcome.summary);
    }
    ExitCode::from(outcome.exit_code as u8)
}
