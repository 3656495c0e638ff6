//! The acceptance gate: run the full criteria suite on a fixed master seed
//! and require every criterion to pass. One line per criterion is printed
//! so a failing run names the criterion and its measured values.

use cascade_lab::acceptance::{run_suite, Suite};
use std::io::Write;

#[test]
fn acceptance_criteria_all_pass() {
    let report = run_suite(Suite::Full, 42);
    // Write through the raw stream so the lines land in the log even when
    // the harness captures test output.
    let mut err = std::io::stderr().lock();
    for r in &report.results {
        let _ = writeln!(
            err,
            "[{:>2}] {:<24} {}  ({:>8.2}s)  {}",
            r.index,
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    let _ = writeln!(
        err,
        "acceptance: suite {} with master seed {}: {} ({} criteria), summary hash {}",
        report.suite,
        report.master_seed,
        if report.all_pass { "all pass" } else { "FAILURES" },
        report.results.len(),
        report.summary_hash
    );
    let failed: Vec<String> = report
        .results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("[{}] {}: {}", r.index, r.name, r.detail))
        .collect();
    assert!(
        report.all_pass,
        "acceptance criteria failed:\n{}",
        failed.join("\n")
    );
}
