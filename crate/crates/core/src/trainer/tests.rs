use super::*;
use crate::data::{generate_synthetic_dataset, DatasetSpec};

fn dataset(per_class: usize, seed: u64) -> Dataset {
    generate_synthetic_dataset(&DatasetSpec {
        samples_per_class: per_class,
        image_size: 16,
        seed,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: epochs,
        seed: 5,
        loss: LossConfig {
            n_neg: 8,
            k_clusters: 2,
            ..LossConfig::default()
        },
        encoder: EncoderConfig {
            conv_channels: vec![4, 8],
            feature_dim: 16,
            head_dim: 32,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn lr_schedule_examples() {
    assert_eq!(lr_schedule(0, 1e-3, LrMode::Pretext, 0.9, 20), 1e-3);
    assert_eq!(lr_schedule(500, 1e-3, LrMode::Pretext, 0.9, 20), 1e-3);
    assert_eq!(lr_schedule(0, 1e-4, LrMode::Finetune, 0.9, 20), 1e-4);
    assert_eq!(lr_schedule(19, 1e-4, LrMode::Finetune, 0.9, 20), 1e-4);
    assert!((lr_schedule(20, 1e-4, LrMode::Finetune, 0.9, 20) - 9e-5).abs() < 1e-18);
    assert!((lr_schedule(45, 1e-4, LrMode::Finetune, 0.9, 20) - 8.1e-5).abs() < 1e-18);
}

fn with_grad(value: f64, grad: f64) -> Tensor {
    let mut t = Tensor::scalar(value);
    t.accumulate_grad(&[grad]).unwrap();
    t
}

#[test]
fn sgd_step_arithmetic() {
    let mut p = vec![with_grad(1.0, 2.0)];
    sgd_step(&mut p, 0.1).unwrap();
    assert!((p[0].item() - 0.8).abs() < 1e-15);
    assert_eq!(p[0].grad(), Some(&[0.0][..]));
    let mut p = vec![with_grad(3.0, 0.0), Tensor::scalar(4.0)];
    sgd_step(&mut p, 0.1).unwrap();
    assert_eq!((p[0].item(), p[1].item()), (3.0, 4.0));
}

#[test]
fn sgd_step_rejects_non_finite_gradients_untouched() {
    let mut p = vec![with_grad(1.0, 2.0), with_grad(5.0, f64::NAN)];
    assert!(matches!(sgd_step(&mut p, 0.1), Err(CpcdError::NonFinite(_))));
    assert_eq!((p[0].item(), p[1].item()), (1.0, 5.0));
}

#[test]
fn sgd_descends_a_quadratic_bowl() {
    let centre = Tensor::vector(vec![1.0, -2.0, 0.5]);
    let mut p = vec![Tensor::vector(vec![4.0, 3.0, -1.0])];
    for _ in 0..100 {
        let mut g = Graph::new();
        let x = g.param(p[0].clone()).unwrap();
        let c = g.constant(centre.clone()).unwrap();
        let d = g.sub(x, c).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        p[0].accumulate_grad(g.grad(x).unwrap()).unwrap();
        sgd_step(&mut p, 0.1).unwrap();
    }
    for (a, b) in p[0].data().iter().zip(centre.data()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn two_epochs_of_sixty_four_take_four_steps() {
    let ds = dataset(16, 1);
    let dir = tempfile::tempdir().unwrap();
    let out = train_pretext(&ds, small_config(2), dir.path()).unwrap();
    assert_eq!(out.state.step, 4);
    assert_eq!(out.state.epoch, 2);
    assert_eq!(out.state.bank_updates, 2);
    assert_eq!(out.epochs.len(), 2);
    assert!(out.epochs.iter().all(|e| e.steps == 2 && e.bank_updated == 64));
    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], STEP_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,0,"));
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
    assert!(out.final_checkpoint.exists());
    assert_eq!(ds.total_label_reads(), 0);
    let bank = out.final_checkpoint;
    let loaded = LoadedCheckpoint::load(&bank).unwrap();
    for i in 0..loaded.bank.len() {
        let n: f64 = loaded.bank.rows().row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn runs_are_byte_identical() {
    let ds = dataset(16, 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train_pretext(&ds, small_config(2), a.path()).unwrap();
    train_pretext(&ds, small_config(2), b.path()).unwrap();
    for f in [METRICS_FILE, EPOCHS_FILE, BEST_CHECKPOINT, FINAL_CHECKPOINT] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resumed_run_replays_the_uninterrupted_one() {
    let ds = dataset(16, 3);
    let full = tempfile::tempdir().unwrap();
    let whole = train_pretext(&ds, small_config(2), full.path()).unwrap();

    let part = tempfile::tempdir().unwrap();
    let first = train_pretext(&ds, small_config(1), part.path()).unwrap();
    let loaded = LoadedCheckpoint::load(&first.final_checkpoint).unwrap();
    assert_eq!(loaded.meta.state.epoch, 1);
    let rest = tempfile::tempdir().unwrap();
    let resumed = Trainer::resume(&ds, loaded, Some(2), None).unwrap().run(rest.path()).unwrap();
    assert_eq!(resumed.epochs.len(), 1);
    let (a, b) = (whole.epochs[1].mean.cpcd, resumed.epochs[0].mean.cpcd);
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    assert_eq!(
        fs::read(full.path().join(FINAL_CHECKPOINT)).unwrap(),
        fs::read(rest.path().join(FINAL_CHECKPOINT)).unwrap()
    );
}

#[test]
fn resume_rejects_a_different_dataset() {
    let ds = dataset(16, 3);
    let dir = tempfile::tempdir().unwrap();
    let out = train_pretext(&ds, small_config(1), dir.path()).unwrap();
    let other = dataset(16, 4);
    let loaded = LoadedCheckpoint::load(&out.final_checkpoint).unwrap();
    assert!(Trainer::resume(&other, loaded, Some(2), None).is_err());
}

#[test]
fn three_bad_steps_halt_training() {
    let ds = dataset(16, 1);
    let mut t = Trainer::new(&ds, small_config(5)).unwrap();
    for p in t.network.params_mut() {
        p.data_mut().iter_mut().for_each(|x| *x = 1e300);
    }
    let dir = tempfile::tempdir().unwrap();
    match t.run(dir.path()) {
        Err(CpcdError::TrainingHalted(msg)) => assert!(msg.contains("3 consecutive")),
        other => panic!("{:?}", other.map(|o| o.state)),
    }
    assert_eq!(t.state.aborted_steps, 3);
    assert_eq!(t.aborts.len(), 3);
}

#[test]
fn zero_epochs_saves_the_initial_network() {
    let ds = dataset(16, 1);
    let dir = tempfile::tempdir().unwrap();
    let out = train_pretext(&ds, small_config(0), dir.path()).unwrap();
    assert_eq!(out.state.step, 0);
    assert!(out.best_checkpoint.is_none());
    let loaded = LoadedCheckpoint::load(&out.final_checkpoint).unwrap();
    let fresh = Network::new(small_config(0).encoder, 5).unwrap();
    assert_eq!(loaded.network.params(), fresh.params());
}

#[test]
fn plateau_stops_early() {
    let ds = dataset(16, 1);
    let cfg = TrainConfig {
        patience: 1,
        min_delta: 1e9,
        ..small_config(10)
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_pretext(&ds, cfg, dir.path()).unwrap();
    // Epoch 0 refreshes every row but started from the random bank, so it
    // is not tracked. Epoch 1 improves on nothing and resets patience; epoch
    // 2 may still set a new best but never clears the huge min_delta.
    assert!(out.state.initial_rows.is_empty());
    assert!(!out.epochs[0].improved);
    assert!(out.epochs[1].improved);
    let last_best = out.epochs.iter().rposition(|e| e.improved);
    assert_eq!(out.state.best_epoch, last_best);
    assert_eq!(out.state.epoch, 3);
    assert!(out.state.stopped_early);
}

#[test]
fn rows_missed_by_a_dropped_tail_delay_plateau_tracking() {
    // 72 samples in batches of 32 leave eight ids out of every epoch.
    let ds = dataset(18, 1);
    let cfg = TrainConfig {
        patience: 100,
        ..small_config(6)
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_pretext(&ds, cfg, dir.path()).unwrap();
    assert_eq!(out.epochs[0].bank_updated, 64);
    let first = out.epochs.iter().position(|e| e.improved).unwrap();
    assert!(first >= 1);
    for e in &out.epochs[..first] {
        assert!(!e.improved);
    }
    assert!(out.state.initial_rows.is_empty());
}

#[test]
fn bad_geometry_is_rejected_before_training() {
    let ds = dataset(16, 1);
    let cases = [
        TrainConfig {
            patch_size: Some(9),
            ..small_config(1)
        },
        TrainConfig {
            batch_size: 3,
            ..small_config(1)
        },
        TrainConfig {
            batch_size: 128,
            ..small_config(1)
        },
        TrainConfig {
            patch_grid: 3,
            ..small_config(1)
        },
        TrainConfig {
            encoder: EncoderConfig {
                in_channels: 1,
                ..small_config(1).encoder
            },
            ..small_config(1)
        },
        TrainConfig {
            loss: LossConfig {
                n_neg: 64,
                ..small_config(1).loss
            },
            ..small_config(1)
        },
    ];
    for cfg in cases {
        let err = Trainer::new(&ds, cfg.clone()).err().unwrap_or_else(|| panic!("{cfg:?}"));
        assert!(err.is_validation());
    }
}

#[test]
fn checkpoint_meta_round_trips_exactly() {
    let ds = dataset(16, 1);
    let mut t = Trainer::new(&ds, small_config(1)).unwrap();
    t.state.best_loss = Some(0.1 + 0.2);
    let ckpt = t.checkpoint().unwrap();
    let back = LoadedCheckpoint::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back.meta.state, t.state);
    assert_eq!(back.meta.train, t.config);
    assert!(!ckpt.config.contains("out"));
}

#[test]
fn both_bank_schedules_refresh_every_row_once_per_epoch() {
    let ds = dataset(16, 1);
    for schedule in [BankSchedule::Batch, BankSchedule::Epoch] {
        let cfg = TrainConfig {
            bank_update: schedule,
            ..small_config(2)
        };
        let mut t = Trainer::new(&ds, cfg).unwrap();
        let before = t.bank().rows().clone();
        let s = t.run_epoch(&mut StepLog::sink()).unwrap();
        assert_eq!((s.bank_updated, s.bank_skipped), (64, 0), "{schedule:?}");
        for i in 0..64 {
            assert_ne!(t.bank().rows().row(i), before.row(i));
        }
    }
}

#[test]
fn batch_schedule_feeds_later_steps_fresh_rows() {
    // Under the batch schedule the second step already sees rows written by
    // the first, so its loss differs from the epoch schedule's.
    let ds = dataset(16, 1);
    let run = |schedule| {
        let mut t = Trainer::new(&ds, TrainConfig { bank_update: schedule, ..small_config(1) }).unwrap();
        t.run_epoch(&mut StepLog::sink()).unwrap().mean.cpcd
    };
    assert_ne!(run(BankSchedule::Batch), run(BankSchedule::Epoch));
}
