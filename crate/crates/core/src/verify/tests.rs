use super::*;

#[test]
fn suite_passes_on_a_clean_build() {
    let report = run_suite(&VerifyOptions::default()).unwrap();
    assert!(report.passed(), "{report}");
    assert!(report.checks.len() >= 20);
}

#[test]
fn flipped_acos_derivative_is_caught() {
    let checks = check_loss_gradients(Some(GradFault::FlipAcosSign)).unwrap();
    let nce: Vec<_> = checks.iter().filter(|c| c.name.starts_with("grad/nce")).collect();
    assert!(!nce.is_empty());
    assert!(nce.iter().all(|c| !c.passed), "{checks:?}");
    // GCLD has no acos and must be unaffected.
    assert!(checks.iter().filter(|c| c.name.starts_with("grad/gcld")).all(|c| c.passed));
    assert!(!check_network_gradient(Some(GradFault::FlipAcosSign)).unwrap().passed);
}

#[test]
fn report_lists_every_check_with_its_error() {
    let report = VerifyReport {
        checks: vec![
            CheckResult::within("a", 1e-12, 1e-9, ""),
            CheckResult::within("bb", 2.0, 0.0, "two violations"),
        ],
    };
    let text = report.to_string();
    assert!(text.contains("ok   a "));
    assert!(text.contains("FAIL bb"));
    assert!(text.contains("max_error=2.000e0"));
    assert!(text.ends_with("2 checks, 1 failed"));
    assert!(!report.passed());
}

#[test]
fn bundles_meet_their_separation_contract() {
    for seed in 0..10 {
        let (x, labels) = bundles(seed, 16);
        assert_eq!(x.rows(), 60);
        let (intra, inter) = cosine_extremes(&x, &labels);
        assert!(intra > 0.95 && inter < 0.3, "seed {seed}: {intra} {inter}");
    }
}

#[test]
fn graph_values_match_the_oracle_on_one_instance() {
    let mut rng = stream(42, &[TAG_ORACLE]);
    let inst = random_instance(5, 6, 3, 2, &mut rng).unwrap();
    let cfg = LossConfig::default();
    let v = graph_values(&inst, &cfg).unwrap();
    let o = oracle::evaluate(&inst, &cfg);
    assert!((v.cpcd - o.cpcd).abs() < 1e-10);
    assert!((v.gcld - o.gcld).abs() < 1e-10);
}
