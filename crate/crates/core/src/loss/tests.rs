use std::f64::consts::{E, FRAC_PI_2};

use proptest::prelude::*;

use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::error::CpcdError;
use crate::rng::stream;
use crate::verify::{graph_values, oracle, random_instance, random_unit};

fn rows(r: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(r).unwrap()
}

fn negs(n: &[Vec<Vec<f64>>]) -> Tensor {
    let (b, k, d) = (n.len(), n[0].len(), n[0][0].len());
    Tensor::new([b, k, d], n.iter().flatten().flatten().copied().collect()).unwrap()
}

fn plain(tau: f64) -> LossConfig {
    LossConfig {
        tau,
        margin: 0.0,
        scale: 1.0,
        ..LossConfig::default()
    }
}

/// NCE loss on `B × d` targets with fixed bank rows.
fn nce(target: &[Vec<f64>], pos: &[Vec<f64>], neg: &[Vec<Vec<f64>>], cfg: &LossConfig) -> (f64, LossDiagnostics) {
    let mut g = Graph::new();
    let t = g.constant(rows(target)).unwrap();
    let p = g.constant(rows(pos)).unwrap();
    let n = g.constant(negs(neg)).unwrap();
    let (l, d) = nce_anchor_loss(&mut g, t, p, n, cfg).unwrap();
    (g.value(l).item(), d)
}

fn margin_h(target: &[f64], pos: &[f64], neg: &[Vec<f64>], cfg: &LossConfig) -> f64 {
    let mut g = Graph::new();
    let t = g.constant(rows(&[target.to_vec()])).unwrap();
    let p = g.constant(rows(&[pos.to_vec()])).unwrap();
    let n = g.constant(negs(&[neg.to_vec()])).unwrap();
    let (h, _) = estimator_margin_batch(&mut g, t, p, n, cfg).unwrap();
    g.value(h).data()[0]
}

fn cross(emb: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize], tau: f64) -> Vec<f64> {
    let mut g = Graph::new();
    let e = g.constant(rows(emb)).unwrap();
    let v = cross_level_terms(&mut g, e, &rows(centroids), assign, tau).unwrap();
    g.value(v).data().to_vec()
}

fn model(centroids: &[Vec<f64>], assign: &[usize]) -> ClusterModel {
    ClusterModel {
        centroids: rows(centroids),
        assignments: assign.to_vec(),
        iterations: 1,
        converged: true,
    }
}

fn random_orthogonal(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, &[77]);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v = random_unit(d, &mut rng);
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / n).collect());
    }
    q
}

fn rotate(q: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    q.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

#[test]
fn cosine_similarity_examples() {
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((cosine_similarity(&[0.6, 0.8], &[1.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
    match cosine_similarity(&[2.0, 0.0], &[1.0, 0.0]) {
        Err(CpcdError::NotUnit(norms)) => assert_eq!(norms, vec![2.0, 1.0]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn margin_similarity_examples() {
    let v = margin_similarity(&[1.0, 0.0], &[0.0, 1.0], 0.5, 1.0).unwrap();
    assert!((v - -0.47942553860420295).abs() < 1e-12);
    let v = margin_similarity(&[1.0, 0.0], &[1.0, 0.0], 0.5, 1.0).unwrap();
    assert!((v - 0.8775825618903728).abs() < 1e-12);
    let mut rng = stream(3, &[1]);
    for _ in 0..100 {
        let a = random_unit(5, &mut rng);
        let b = random_unit(5, &mut rng);
        let m = margin_similarity(&a, &b, 0.0, 1.0).unwrap();
        assert!((m - cosine_similarity(&a, &b).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn estimator_examples() {
    let t = [1.0, 0.0];
    let none: [Vec<f64>; 0] = [];
    assert_eq!(nce_estimator(&t, &t, &none, 0.3).unwrap(), 1.0);
    let h = nce_estimator(&t, &t, &[vec![0.0, 1.0]], 1.0).unwrap();
    assert!((h - 0.7310585786300049).abs() < 1e-12);
    for tau in [0.1, 0.4, 2.0] {
        let h = nce_estimator(&t, &[0.6, 0.8], &[vec![0.6, -0.8]], tau).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
    }
    assert!(nce_estimator(&t, &t, &none, 0.0).is_err());
    assert!(nce_estimator(&t, &t, &none, -1.0).is_err());
}

#[test]
fn margin_estimator_worked_example() {
    let t = [1.0, 0.0];
    let h = nce_estimator_margin(&t, &t, &[vec![0.0, 1.0]], 1.0, 0.5, 1.0).unwrap();
    assert!((h - 0.8144857960269507).abs() < 1e-12, "{h}");
    let cfg = LossConfig {
        tau: 1.0,
        margin: 0.5,
        scale: 1.0,
        ..LossConfig::default()
    };
    assert!((margin_h(&t, &t, &[vec![0.0, 1.0]], &cfg) - 0.8144857960269507).abs() < 1e-12);
}

#[test]
fn margin_never_lowers_h_in_the_unsaturated_range() {
    let mut rng = stream(4, &[1]);
    for _ in 0..200 {
        let t = random_unit(4, &mut rng);
        let p = random_unit(4, &mut rng);
        let n: Vec<Vec<f64>> = (0..3).map(|_| random_unit(4, &mut rng)).collect();
        let m = 0.4;
        if n.iter().any(|v| cosine_similarity(v, &t).unwrap() <= (std::f64::consts::PI - m).cos()) {
            continue;
        }
        let h = nce_estimator(&t, &p, &n, 0.5).unwrap();
        let hm = nce_estimator_margin(&t, &p, &n, 0.5, m, 1.0).unwrap();
        assert!(hm >= h);
    }
}

#[test]
fn margin_estimator_falls_as_negative_similarity_rises() {
    let t = [1.0, 0.0];
    let p = [0.3, (1.0f64 - 0.09).sqrt()];
    for m in [0.0, 0.25, 0.5] {
        for s in [1.0, 6.0] {
            let mut prev = f64::INFINITY;
            for i in 0..=36 {
                let c = -0.9 + 0.05 * i as f64;
                let n = vec![c, (1.0 - c * c).sqrt()];
                let h = nce_estimator_margin(&t, &p, &[n], 0.4, m, s).unwrap();
                assert!(h <= prev, "m {m} s {s} c {c}");
                prev = h;
            }
        }
    }
}

#[test]
fn nce_loss_vanishes_in_the_low_temperature_limit() {
    let t = vec![vec![1.0, 0.0, 0.0]];
    let n = vec![vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]];
    let mut prev = f64::INFINITY;
    for tau in [0.4, 0.1, 0.05, 0.01] {
        let cfg = LossConfig {
            tau,
            ..LossConfig::default()
        };
        let (l, _) = nce(&t, &t, &n, &cfg);
        assert!(l >= 0.0 && l <= prev);
        prev = l;
    }
    assert!(prev < 1e-12, "{prev}");
}

#[test]
fn batch_of_two_with_one_negative_matches_hand_sum() {
    let target = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let pos = vec![vec![0.8, 0.6], vec![0.6, 0.8]];
    let neg = vec![vec![vec![0.0, -1.0]], vec![vec![-0.28, 0.96]]];
    let cfg = plain(1.0);
    // Pairwise term: −log h − log(1 − σ(neg)).
    let expected: f64 = [(0.8, 0.0), (0.8, 0.96)]
        .iter()
        .map(|&(p, n): &(f64, f64)| -(p.exp() / (p.exp() + n.exp())).ln() + (1.0 + n.exp()).ln())
        .sum();
    let (l, _) = nce(&target, &pos, &neg, &cfg);
    assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
    assert!((l - oracle::nce_loss(&target, &pos, &neg, &cfg)).abs() < 1e-12);
    let est = LossConfig {
        negative_term: NegativeTerm::Estimator,
        ..cfg
    };
    let (l, d) = nce(&target, &pos, &neg, &est);
    assert!((l - oracle::nce_loss(&target, &pos, &neg, &est)).abs() < 1e-12);
    // A single negative has an empty noise set, so its term sits on the floor.
    assert_eq!(d.log_floor_hits, 2);
}

#[test]
fn nce_loss_falls_as_positive_similarity_rises() {
    let pos = vec![vec![1.0, 0.0, 0.0]];
    let n = vec![vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]]];
    for term in [NegativeTerm::PairwiseSigmoid, NegativeTerm::Estimator] {
        let cfg = LossConfig {
            negative_term: term,
            ..LossConfig::default()
        };
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let a = std::f64::consts::PI * (1.0 - i as f64 / 20.0);
            let (l, _) = nce(&[vec![a.cos(), a.sin(), 0.0]], &pos, &n, &cfg);
            assert!(l < prev, "{term:?} at angle {a}");
            prev = l;
        }
    }
}

#[test]
fn image_and_patch_losses_agree_on_identical_targets() {
    let mut rng = stream(5, &[1]);
    let m: Vec<Vec<f64>> = (0..3).map(|_| random_unit(6, &mut rng)).collect();
    let n: Vec<Vec<Vec<f64>>> = (0..3).map(|_| (0..4).map(|_| random_unit(6, &mut rng)).collect()).collect();
    let cfg = LossConfig::default();
    let mut g = Graph::new();
    let mv = g.constant(rows(&m)).unwrap();
    let nv = g.constant(negs(&n)).unwrap();
    let (a, _) = nce_loss_image(&mut g, mv, mv, nv, &cfg).unwrap();
    let (b, _) = nce_loss_patch(&mut g, mv, mv, nv, &cfg).unwrap();
    assert_eq!(g.value(a).item(), g.value(b).item());
}

#[test]
fn nce_total_is_a_convex_combination() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(2.0)).unwrap();
    let b = g.constant(Tensor::scalar(4.0)).unwrap();
    let half = nce_total(&mut g, a, b, 0.5).unwrap();
    let one = nce_total(&mut g, a, b, 1.0).unwrap();
    assert_eq!(g.value(half).item(), 3.0);
    assert_eq!(g.value(one).item(), 2.0);
}

#[test]
fn cross_level_examples() {
    let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let v = cross(&[vec![1.0, 0.0]], &c, &[0], 1.0);
    assert!((v[0] - 0.3132616875182228).abs() < 1e-12);
    let v = cross(&[vec![0.6, 0.8], vec![-1.0, 0.0]], &[vec![1.0, 0.0]], &[0, 0], 0.3);
    assert_eq!(v, vec![0.0, 0.0]);
    // Equidistant from three centroids.
    let c3 = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let s = 1.0 / 3f64.sqrt();
    let v = cross(&[vec![s, s, s]], &c3, &[2], 0.4);
    assert!((v[0] - 3f64.ln()).abs() < 1e-12);
    let mut g = Graph::new();
    let e = g.constant(rows(&[vec![1.0, 0.0]])).unwrap();
    assert!(matches!(
        cross_level_terms(&mut g, e, &rows(&c), &[2], 1.0),
        Err(CpcdError::OutOfRange { index: 2, len: 2 })
    ));
}

#[test]
fn three_centroid_instance_matches_direct_softmax() {
    let c = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-0.6, -0.8]];
    let e = vec![0.28, 0.96];
    let logits: Vec<f64> = c.iter().map(|r| (r[0] * e[0] + r[1] * e[1]) / 0.5).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    for a in 0..3 {
        let v = cross(&[e.clone()], &c, &[a], 0.5);
        assert!((v[0] - -(logits[a].exp() / z).ln()).abs() < 1e-12);
    }
}

#[test]
fn losses_are_rotation_invariant() {
    let mut rng = stream(6, &[1]);
    for seed in 0..5 {
        let inst = random_instance(6, 8, 3, 3, &mut rng).unwrap();
        let q = random_orthogonal(8, seed);
        let r = |v: &Vec<Vec<f64>>| v.iter().map(|x| rotate(&q, x)).collect::<Vec<_>>();
        let rotated = oracle::Instance {
            f_bar: r(&inst.f_bar),
            g_bar: r(&inst.g_bar),
            positives: r(&inst.positives),
            negatives: inst.negatives.iter().map(r).collect(),
            image_centroids: r(&inst.image_centroids),
            patch_centroids: r(&inst.patch_centroids),
            ..inst.clone()
        };
        let cfg = LossConfig::default();
        let a = graph_values(&inst, &cfg).unwrap();
        let b = graph_values(&rotated, &cfg).unwrap();
        for (x, y) in [
            (a.nce_image, b.nce_image),
            (a.nce_patch, b.nce_patch),
            (a.gcld_image_term, b.gcld_image_term),
            (a.gcld_patch_term, b.gcld_patch_term),
            (a.cpcd, b.cpcd),
        ] {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn gcld_degenerates_with_one_cluster_and_weights_by_lambda() {
    let mut rng = stream(7, &[1]);
    let f: Vec<Vec<f64>> = (0..4).map(|_| random_unit(5, &mut rng)).collect();
    let gb: Vec<Vec<f64>> = (0..4).map(|_| random_unit(5, &mut rng)).collect();
    let mut g = Graph::new();
    let fv = g.constant(rows(&f)).unwrap();
    let gv = g.constant(rows(&gb)).unwrap();
    let one = model(&[random_unit(5, &mut rng)], &[0; 4]);
    let (l, _, _) = gcld_loss(&mut g, fv, gv, &one, &one, 0.5, 0.4).unwrap();
    assert_eq!(g.value(l).item(), 0.0);

    let ic = model(&[vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0]], &[0, 1, 0, 1]);
    let pc = model(&[vec![0.0, 0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0, 0.0]], &[1, 1, 0, 0]);
    let (l, ti, tp) = gcld_loss(&mut g, fv, gv, &ic, &pc, 1.0, 0.4).unwrap();
    assert_eq!(g.value(l).item(), g.value(ti).item());
    let direct: f64 = cross(&f, &[pc.centroids.row(0).to_vec(), pc.centroids.row(1).to_vec()], &[1, 1, 0, 0], 0.4)
        .iter()
        .sum();
    assert!((g.value(ti).item() - direct).abs() < 1e-12);
    let (l, _, _) = gcld_loss(&mut g, fv, gv, &ic, &pc, 0.0, 0.4).unwrap();
    assert_eq!(g.value(l).item(), g.value(tp).item());

    let short = g.constant(rows(&f[..3])).unwrap();
    assert!(gcld_loss(&mut g, short, gv, &ic, &pc, 0.5, 0.4).is_err());
    assert!(gcld_loss(&mut g, fv, gv, &ic, &one, 0.5, 0.4).is_err());
}

#[test]
fn cpcd_weights_gcld_against_nce() {
    let mut rng = stream(8, &[1]);
    let inst = random_instance(4, 8, 2, 2, &mut rng).unwrap();
    let cfg = |lp: f64| LossConfig {
        lambda_prime: lp,
        ..LossConfig::default()
    };
    let v1 = graph_values(&inst, &cfg(1.0)).unwrap();
    assert_eq!(v1.cpcd, v1.gcld);
    let v0 = graph_values(&inst, &cfg(0.0)).unwrap();
    assert_eq!(v0.cpcd, v0.nce_total);
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(1.2)).unwrap();
    let b = g.constant(Tensor::scalar(0.8)).unwrap();
    let c = convex(&mut g, a, b, 0.5).unwrap();
    assert!((g.value(c).item() - 1.0).abs() < 1e-15);
}

#[test]
fn cpcd_matches_loop_oracle_on_batch_four() {
    let mut rng = stream(9, &[1]);
    for term in [NegativeTerm::PairwiseSigmoid, NegativeTerm::Estimator] {
        for _ in 0..10 {
            let inst = random_instance(4, 8, 3, 2, &mut rng).unwrap();
            let cfg = LossConfig {
                negative_term: term,
                ..LossConfig::default()
            };
            let v = graph_values(&inst, &cfg).unwrap();
            let o = oracle::evaluate(&inst, &cfg);
            assert!((v.cpcd - o.cpcd).abs() < 1e-9);
            assert!((v.nce_image - o.nce_image).abs() < 1e-9);
            assert!((v.gcld - o.gcld).abs() < 1e-9);
        }
    }
}

#[test]
fn saturated_margins_and_clamps_are_counted() {
    let t = vec![vec![1.0, 0.0]];
    // Negative at angle π − 0.1: +0.5 pushes past π.
    let a = std::f64::consts::PI - 0.1;
    let n = vec![vec![vec![a.cos(), a.sin()], vec![1.0, 0.0]]];
    let (_, d) = nce(&t, &t, &n, &LossConfig::default());
    assert_eq!(d.margin_saturated, 1);
    assert_eq!(d.acos_clamps, 1);
}

#[test]
fn arms_override_the_right_fields() {
    let base = LossConfig::default();
    let nce = base.with_arm(LossArm::Nce);
    assert_eq!((nce.lambda_prime, nce.margin, nce.scale), (0.0, 0.0, 1.0));
    let mid = base.with_arm(LossArm::NceGcld);
    assert_eq!((mid.lambda_prime, mid.margin, mid.scale), (0.5, 0.0, 1.0));
    assert_eq!(base.with_arm(LossArm::Cpcd), base);
    for arm in LossArm::ALL {
        assert_eq!(arm.as_str().parse::<LossArm>().unwrap(), arm);
    }
    assert_eq!("nce-only".parse::<LossArm>().unwrap(), LossArm::Nce);
    assert!("mse".parse::<LossArm>().is_err());
}

#[test]
fn config_validation() {
    assert!(LossConfig::default().validate().is_ok());
    let bad = [
        LossConfig { tau: 0.0, ..LossConfig::default() },
        LossConfig { margin: FRAC_PI_2, ..LossConfig::default() },
        LossConfig { scale: -1.0, ..LossConfig::default() },
        LossConfig { lambda: 1.5, ..LossConfig::default() },
        LossConfig { k_clusters: 0, ..LossConfig::default() },
        LossConfig { n_neg: 0, ..LossConfig::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn e_constant_sanity() {
    assert!((E / (E + 1.0) - 0.7310585786300049).abs() < 1e-15);
}

proptest! {
    #[test]
    fn margin_reduction_holds(seed in any::<u64>(), n in 1usize..6, tau in 0.1f64..2.0) {
        let mut rng = stream(seed, &[2]);
        let t = random_unit(5, &mut rng);
        let p = random_unit(5, &mut rng);
        let ns: Vec<Vec<f64>> = (0..n).map(|_| random_unit(5, &mut rng)).collect();
        let a = nce_estimator(&t, &p, &ns, tau).unwrap();
        let b = nce_estimator_margin(&t, &p, &ns, tau, 0.0, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn losses_are_non_negative(seed in any::<u64>()) {
        let mut rng = stream(seed, &[3]);
        let inst = random_instance(3, 4, 2, 2, &mut rng).unwrap();
        let v = graph_values(&inst, &LossConfig::default()).unwrap();
        prop_assert!(v.nce_image >= 0.0 && v.nce_patch >= 0.0 && v.gcld >= 0.0 && v.cpcd >= 0.0);
    }
}
