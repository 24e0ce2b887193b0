//! Runs the full acceptance suite and prints one PASS/FAIL line per
//! criterion. Exits nonzero if any criterion fails.

use std::process::ExitCode;

use volterra_cli::acceptance::run_suite;
use volterra_cli::manifest::OutputDir;

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut out = OutputDir::create(dir.path()).expect("output directory");
    let mut timings = Vec::new();
    println!("acceptance suite, seed 0");
    let report = match run_suite(0, &mut out, &mut timings, |c| println!("{}", c.line())) {
        Ok(r) => r,
        Err(e) => {
            println!("acceptance suite aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let total: f64 = timings.iter().map(|(_, s)| s).sum();
    println!("{} of {} criteria passed in {total:.1} s", report.criteria.len() - report.failed_ids().len(), report.criteria.len());
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
