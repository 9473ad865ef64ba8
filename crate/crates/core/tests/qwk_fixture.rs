//! Quadratic weighted kappa against values frozen from scikit-learn's
//! `cohen_kappa_score(weights="quadratic")`. Regenerate with
//! `fixtures/gen_qwk_oracle.py`.

use cpcd_core::probe::{compute_metrics, quadratic_weighted_kappa, ConfusionMatrix};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    confusion: Vec<Vec<u64>>,
    qwk: f64,
}

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

fn fixture() -> Fixture {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/qwk_oracle.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn matches_reference_values() {
    let f = fixture();
    assert_eq!(f.cases.len(), 100);
    for (i, c) in f.cases.iter().enumerate() {
        let m = ConfusionMatrix::from_rows(&c.confusion).unwrap();
        let got = quadratic_weighted_kappa(&m).unwrap();
        assert!((got - c.qwk).abs() < 1e-12, "case {i}: {got} vs {}", c.qwk);
        assert_eq!(compute_metrics(&m).unwrap().qwk, got);
    }
}
