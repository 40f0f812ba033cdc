use std::process::ExitCode;

use mutualmesh::cli::{run, ExitStatus};

fn main() -> ExitCode {
    let result = run(std::env::args_os());
    if result.status == ExitStatus::Success || result.status == ExitStatus::ValidationFailure {
        print!("{}", result.summary);
        if !result.summary.ends_with('\n') {
            println!();
        }
    } else {
        eprintln!("{}", result.summary.trim_end());
    }
    if let Some(p) = &result.json_path {
        eprintln!("json report: {}", p.display());
    }
    ExitCode::from(result.status.code() as u8)
}
