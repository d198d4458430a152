//! Command-line front end. See `ofr --help`.

/// Runs the CLI and returns the process exit code.
pub fn run() -> i32 {
    eprintln!("ofr: not yet wired up");
    2
}
