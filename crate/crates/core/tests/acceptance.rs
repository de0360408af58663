//! Acceptance suite: the eleven end-to-end criteria at full size.
//!
//! One line per criterion goes straight to stderr, so it shows up even
//! without `--nocapture`.

use std::io::Write;

use popgame::verification::{self, Budget, CheckOutcome, DEFAULT_SEED};

fn report(o: popgame::Result<CheckOutcome>) -> bool {
    let (line, pass) = match o {
        Ok(o) => (o.to_string(), o.pass),
        Err(e) => (format!("FAIL error: {e}"), false),
    };
    // Bypasses the test harness capture.
    let _ = writeln!(std::io::stderr().lock(), "{line}");
    pass
}

#[test]
fn acceptance_criteria() {
    let b = Budget::full();
    let results: Vec<bool> = verification::run_all(&b, DEFAULT_SEED).into_iter().map(report).collect();
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
