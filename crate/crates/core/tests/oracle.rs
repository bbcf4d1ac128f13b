//! The runtime against a small reference interpreter on random scenarios.

mod support;

#[test]
fn runtime_matches_reference_interpreter() {
    let bad = support::oracle::mismatches(500);
    assert!(bad.is_empty(), "mismatching seeds: {bad:?}");
}
