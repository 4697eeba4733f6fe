use nacs_core::costmodel::{analytical_model, corrupted_reuse_model, run_sweep, OracleSweep};

#[test]
fn analytical_model_matches_oracle_on_sweep() {
    let sweep = OracleSweep::default();
    let report = run_sweep(&sweep, analytical_model).unwrap();
    assert!(report.checked >= 500, "only {} configs checked", report.checked);
    assert_eq!(report.mismatches, 0, "first counterexample: {:?}", report.first_counterexample);
}

#[test]
fn order_blind_model_is_caught() {
    let report = run_sweep(&OracleSweep::default(), corrupted_reuse_model).unwrap();
    assert!(report.mismatches > 0);
    assert!(report.first_counterexample.is_some());
}
