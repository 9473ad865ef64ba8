use super::*;
use crate::data::generate_synthetic_dataset;
use crate::model::EncoderConfig;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.samples_per_class = 10;
    cfg.dataset.image_size = 16;
    cfg.train.max_epochs = 1;
    cfg.train.batch_size = 16;
    cfg.train.loss.n_neg = 8;
    cfg.train.loss.k_clusters = 2;
    cfg.train.encoder = EncoderConfig {
        conv_channels: vec![4, 8],
        feature_dim: 8,
        head_dim: 16,
        ..EncoderConfig::default()
    };
    cfg.probe.epochs = 5;
    cfg.ablation.seeds = vec![3, 4];
    cfg.ablation.sweep_lambdas = vec![0.1, 1.0];
    cfg.ablation.sweep_taus = vec![0.4];
    cfg
}

#[test]
fn toml_round_trips() {
    let cfg = tiny();
    let text = cfg.to_toml();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    let partial = RunConfig::from_toml("[train.loss]\ntau = 0.2\n").unwrap();
    assert_eq!(partial.train.loss.tau, 0.2);
    assert_eq!(partial.train.loss.margin, 0.5);
    assert!(RunConfig::from_toml("[train]\nlearnig_rate = 1.0\n").unwrap_err().is_validation());
}

#[test]
fn defaults_validate_and_mismatches_do_not() {
    RunConfig::default().validate().unwrap();
    tiny().validate().unwrap();
    let mut c = tiny();
    c.dataset.patch_grid = 4;
    assert!(c.validate().is_err());
    let mut c = tiny();
    c.dataset.channels = 1;
    assert!(c.validate().is_err());
    let mut c = tiny();
    c.ablation.seeds.clear();
    assert!(c.validate().is_err());
    let mut c = tiny();
    c.ablation.sweep_taus = vec![0.0];
    assert!(c.validate().is_err());
    let mut c = tiny();
    c.probe.folds = 11;
    assert!(c.validate().is_err());
}

#[test]
fn median_of_odd_and_even() {
    assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
}

#[test]
fn ablation_runs_every_arm_with_shared_seeds() {
    let cfg = tiny();
    let ds = generate_synthetic_dataset(&cfg.dataset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_ablation(&ds, &cfg, &LossArm::ALL, dir.path()).unwrap();
    assert_eq!(report.runs.len(), 6);
    for arm in LossArm::ALL {
        let seeds: Vec<u64> = report.runs.iter().filter(|r| r.arm == arm).map(|r| r.seed).collect();
        assert_eq!(seeds, vec![3, 4]);
        assert!(report.summary_for(arm).is_some());
    }
    let runs = fs::read_to_string(dir.path().join("ablation_runs.csv")).unwrap();
    assert_eq!(runs.lines().next(), Some(RESULT_HEADER));
    assert_eq!(runs.lines().count(), 7);
    let summary = fs::read_to_string(dir.path().join("ablation_summary.csv")).unwrap();
    let arms: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["nce", "nce+gcld", "cpcd"]);
    assert!(dir.path().join("ablation/cpcd-seed4/final.ckpt").exists());
    assert!(ds.total_label_reads() > 0, "the probe reads labels");
}

#[test]
fn sweep_emits_one_row_per_cell_in_order() {
    let cfg = tiny();
    let ds = generate_synthetic_dataset(&cfg.dataset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = run_sweep(&ds, &cfg, dir.path()).unwrap();
    let cells: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.tau)).collect();
    assert_eq!(cells, vec![(0.1, 0.4), (1.0, 0.4)]);
    assert!(rows.iter().all(|r| r.arm == LossArm::Cpcd && r.seed == 0));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
