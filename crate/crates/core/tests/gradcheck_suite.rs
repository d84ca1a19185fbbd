//! The full finite-difference suite, as the CLI runs it.

use std::time::Instant;

#[test]
fn full_suite_passes_within_budget() {
    let start = Instant::now();
    let outcomes = rbdm_core::gradcheck::run_suite(None).unwrap();
    let elapsed = start.elapsed();

    assert!(outcomes.len() > 20, "suite looks truncated: {}", outcomes.len());
    let mut failed = Vec::new();
    for o in &outcomes {
        if !o.passed() {
            failed.push(format!("{}: {:.3e}", o.name, o.max_rel_err));
        }
    }
    assert!(failed.is_empty(), "failed checks: {failed:?}");
    assert!(
        outcomes.iter().any(|o| o.name.starts_with("rbdm_loss/")),
        "composed loss missing from suite"
    );
    println!(
        "gradcheck: {} checks in {:.1}s, worst rel err {:.3e}",
        outcomes.len(),
        elapsed.as_secs_f64(),
        outcomes.iter().map(|o| o.max_rel_err).fold(0.0, f64::max)
    );
    assert!(elapsed.as_secs() < 60, "suite took {elapsed:?}");
}
