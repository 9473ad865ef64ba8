//! Pure math self-checks: gradient checks on every loss component and the
//! network, comparisons against the loop oracle, k-means recovery and
//! memory-bank behaviour. Nothing here reads a trained artifact.

pub mod oracle;

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{finite_difference_check_with, GradCheckOptions, GradFault, Graph, Tensor, Var};
use crate::error::Result;
use crate::loss::{
    adjusted_rand_index, cpcd_loss, cross_level_term_image, cross_level_term_patch, estimator_batch,
    estimator_margin_batch, gcld_loss, spherical_kmeans, ClusterModel, LossConfig,
    LossInputs, LossValues, NegativeTerm,
};
use crate::memory_bank::MemoryBank;
use crate::model::{EncoderConfig, Network};
use crate::rng::stream;
use oracle::Instance;

/// Tolerance for gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Absolute tolerance for graph-versus-oracle comparisons.
pub const ORACLE_TOLERANCE: f64 = 1e-9;
/// Tolerance for the `m = 0, s = 1` reduction.
pub const REDUCTION_TOLERANCE: f64 = 1e-12;

// Stream tags private to the self-checks.
const TAG_GRAD: u64 = 101;
const TAG_ORACLE: u64 = 102;
const TAG_REDUCTION: u64 = 103;
const TAG_BUNDLES: u64 = 104;
const TAG_BANK: u64 = 105;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest error observed; for counting checks, the violation count.
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn within(name: impl Into<String>, max_error: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: max_error <= tolerance,
            max_error,
            tolerance,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Deliberate gradient bug, used to show the checks can fail.
    pub fault: Option<GradFault>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(
                f,
                "{:<4} {:<w$}  max_error={:<12.3e} tol={:<9.1e} {}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.max_error,
                c.tolerance,
                c.detail
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Runs every check.
pub fn run_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.extend(check_loss_gradients(opts.fault)?);
    checks.push(check_network_gradient(opts.fault)?);
    checks.extend(check_oracle_equivalence(50)?);
    checks.push(check_margin_reduction(1000)?);
    checks.push(check_margin_monotonicity()?);
    checks.push(check_kmeans_recovery(10)?);
    checks.extend(check_memory_bank()?);
    Ok(VerifyReport { checks })
}

pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn unit_rows<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_unit(d, rng)).collect()
}

fn rows_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).expect("rectangular rows")
}

fn negatives_tensor(negs: &[Vec<Vec<f64>>]) -> Tensor {
    let (b, n, d) = (negs.len(), negs[0].len(), negs[0][0].len());
    let data = negs.iter().flatten().flatten().copied().collect();
    Tensor::new([b, n, d], data).expect("rectangular negatives")
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// A random batch with unit embeddings and k-means clusterings of both
/// levels.
pub fn random_instance<R: Rng + ?Sized>(
    batch: usize,
    dim: usize,
    n_neg: usize,
    k: usize,
    rng: &mut R,
) -> Result<Instance> {
    let f_bar = unit_rows(batch, dim, rng);
    let g_bar = unit_rows(batch, dim, rng);
    let image = spherical_kmeans(&rows_tensor(&f_bar), k, 20, rng.random())?;
    let patch = spherical_kmeans(&rows_tensor(&g_bar), k, 20, rng.random())?;
    Ok(Instance {
        positives: unit_rows(batch, dim, rng),
        negatives: (0..batch).map(|_| unit_rows(n_neg, dim, rng)).collect(),
        image_centroids: tensor_rows(&image.centroids),
        image_assign: image.assignments,
        patch_centroids: tensor_rows(&patch.centroids),
        patch_assign: patch.assignments,
        f_bar,
        g_bar,
    })
}

fn clusters(centroids: &[Vec<f64>], assign: &[usize]) -> ClusterModel {
    ClusterModel {
        centroids: rows_tensor(centroids),
        assignments: assign.to_vec(),
        iterations: 0,
        converged: true,
    }
}

/// Evaluates the graph implementation of every term on an instance.
pub fn graph_values(inst: &Instance, cfg: &LossConfig) -> Result<LossValues> {
    let mut g = Graph::new();
    let image_clusters = clusters(&inst.image_centroids, &inst.image_assign);
    let patch_clusters = clusters(&inst.patch_centroids, &inst.patch_assign);
    let inputs = LossInputs {
        f_bar: g.param(rows_tensor(&inst.f_bar))?,
        g_bar: g.param(rows_tensor(&inst.g_bar))?,
        positives: g.constant(rows_tensor(&inst.positives))?,
        negatives: g.constant(negatives_tensor(&inst.negatives))?,
        image_clusters: &image_clusters,
        patch_clusters: &patch_clusters,
    };
    Ok(cpcd_loss(&mut g, &inputs, cfg)?.values(&g))
}

#[derive(Clone, Copy, Debug)]
enum Component {
    NceImage,
    NcePatch,
    NceTotal,
    Gcld,
    Cpcd,
}

impl Component {
    const ALL: [Component; 5] = [
        Component::NceImage,
        Component::NcePatch,
        Component::NceTotal,
        Component::Gcld,
        Component::Cpcd,
    ];

    fn name(self) -> &'static str {
        match self {
            Component::NceImage => "nce_image",
            Component::NcePatch => "nce_patch",
            Component::NceTotal => "nce_total",
            Component::Gcld => "gcld",
            Component::Cpcd => "cpcd",
        }
    }
}

fn gradcheck_result(
    name: String,
    report: crate::autodiff::GradCheckReport,
    started: Instant,
) -> CheckResult {
    let mut detail = format!("{} coords in {:.2}s", report.coords_checked, started.elapsed().as_secs_f64());
    if let Some(f) = report.failures.first() {
        detail.push_str(&format!(
            "; input {} coord {}: analytic {:.6e} vs numeric {:.6e}",
            f.input, f.coord, f.analytic, f.numeric
        ));
    }
    CheckResult {
        name,
        passed: report.passed(),
        max_error: report.max_rel_error,
        tolerance: report.tolerance,
        detail,
    }
}

/// Finite-difference check of each loss component with respect to the
/// raw (pre-normalization) image and patch embeddings. Batch 4, d 8, k 2,
/// two negatives; bank rows and cluster assignments are held fixed.
pub fn check_loss_gradients(fault: Option<GradFault>) -> Result<Vec<CheckResult>> {
    let (b, d, n, k) = (4, 8, 2, 2);
    let mut rng = stream(0, &[TAG_GRAD]);
    let inst = random_instance(b, d, n, k, &mut rng)?;
    let scale_rows = |rows: &[Vec<f64>], rng: &mut crate::rng::StreamRng| -> Tensor {
        let r: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                let s = rng.random_range(0.5..2.0);
                row.iter().map(|x| x * s).collect()
            })
            .collect();
        rows_tensor(&r)
    };
    let point = [scale_rows(&inst.f_bar, &mut rng), scale_rows(&inst.g_bar, &mut rng)];
    let image_clusters = clusters(&inst.image_centroids, &inst.image_assign);
    let patch_clusters = clusters(&inst.patch_centroids, &inst.patch_assign);
    let positives = rows_tensor(&inst.positives);
    let negatives = negatives_tensor(&inst.negatives);
    let opts = GradCheckOptions {
        fault,
        ..GradCheckOptions::with_tolerance(GRAD_TOLERANCE)
    };

    let mut out = Vec::new();
    for term in [NegativeTerm::PairwiseSigmoid, NegativeTerm::Estimator] {
        let cfg = LossConfig {
            k_clusters: k,
            n_neg: n,
            negative_term: term,
            ..LossConfig::default()
        };
        for comp in Component::ALL {
            if term == NegativeTerm::Estimator && matches!(comp, Component::Gcld) {
                continue;
            }
            let started = Instant::now();
            let program = |g: &mut Graph, v: &[Var]| -> Result<Var> {
                let f_bar = g.l2_normalize(v[0])?;
                let g_bar = g.l2_normalize(v[1])?;
                let inputs = LossInputs {
                    f_bar,
                    g_bar,
                    positives: g.constant(positives.clone())?,
                    negatives: g.constant(negatives.clone())?,
                    image_clusters: &image_clusters,
                    patch_clusters: &patch_clusters,
                };
                let br = cpcd_loss(g, &inputs, &cfg)?;
                Ok(match comp {
                    Component::NceImage => br.nce_image,
                    Component::NcePatch => br.nce_patch,
                    Component::NceTotal => br.nce_total,
                    Component::Gcld => br.gcld,
                    Component::Cpcd => br.cpcd,
                })
            };
            let report = finite_difference_check_with(program, &point, &opts)?;
            let term_name = match term {
                NegativeTerm::PairwiseSigmoid => "pairwise-sigmoid",
                NegativeTerm::Estimator => "estimator",
            };
            out.push(gradcheck_result(
                format!("grad/{}/{}", comp.name(), term_name),
                report,
                started,
            ));
        }
    }
    Ok(out)
}

/// Small encoder used for the end-to-end gradient check.
fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        in_channels: 3,
        conv_channels: vec![3, 4],
        conv_strides: vec![2, 2],
        kernel_size: 3,
        feature_dim: 5,
        head_dim: 8,
        patch_count: 4,
    }
}

/// Finite-difference check of the composite loss with respect to every
/// encoder and head parameter: 4 images of 8×8, 2×2 jigsaw patches of 4×4,
/// embedding width 8, k 2, two negatives.
pub fn check_network_gradient(fault: Option<GradFault>) -> Result<CheckResult> {
    let started = Instant::now();
    let (b, n, k) = (4, 2, 2);
    let config = tiny_encoder();
    let net = Network::new(config.clone(), 3)?;
    let mut rng = stream(1, &[TAG_GRAD]);
    let mut uniform = |shape: [usize; 4]| -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random::<f64>()).collect()).expect("shape")
    };
    let images = uniform([b, 8, 8, 3]);
    let patches = uniform([b * 4, 4, 4, 3]);
    let d = config.head_dim;
    let positives = rows_tensor(&unit_rows(b, d, &mut rng));
    let negs: Vec<Vec<Vec<f64>>> = (0..b).map(|_| unit_rows(n, d, &mut rng)).collect();
    let negatives = negatives_tensor(&negs);
    let cfg = LossConfig {
        k_clusters: k,
        n_neg: n,
        ..LossConfig::default()
    };

    let embed = |g: &mut Graph, p: &[Var]| -> Result<(Var, Var)> {
        let x = g.constant(images.clone())?;
        let feats = net.encode(g, p, x)?;
        let f = net.project_image(g, p, feats)?;
        let xp = g.constant(patches.clone())?;
        let pf = net.encode_patches(g, p, xp)?;
        let gp = net.project_patches(g, p, pf)?;
        // Same path as a training step with centred heads.
        let (f, gp) = (g.center_rows(f)?, g.center_rows(gp)?);
        Ok((g.l2_normalize(f)?, g.l2_normalize(gp)?))
    };
    // Clusters from the base point, then fixed.
    let (image_clusters, patch_clusters) = {
        let mut g = Graph::new();
        let p = net.bind(&mut g)?;
        let (f, gp) = embed(&mut g, &p)?;
        (
            spherical_kmeans(g.value(f), k, cfg.kmeans_iters, 5)?,
            spherical_kmeans(g.value(gp), k, cfg.kmeans_iters, 6)?,
        )
    };
    let program = |g: &mut Graph, p: &[Var]| -> Result<Var> {
        let (f_bar, g_bar) = embed(g, p)?;
        let inputs = LossInputs {
            f_bar,
            g_bar,
            positives: g.constant(positives.clone())?,
            negatives: g.constant(negatives.clone())?,
            image_clusters: &image_clusters,
            patch_clusters: &patch_clusters,
        };
        Ok(cpcd_loss(g, &inputs, &cfg)?.cpcd)
    };
    let opts = GradCheckOptions {
        fault,
        ..GradCheckOptions::with_tolerance(GRAD_TOLERANCE)
    };
    let report = finite_difference_check_with(program, net.params(), &opts)?;
    Ok(gradcheck_result("grad/cpcd/network-params".into(), report, started))
}

fn random_config<R: Rng + ?Sized>(rng: &mut R) -> LossConfig {
    LossConfig {
        tau: rng.random_range(0.1..1.0),
        margin: rng.random_range(0.0..1.2),
        scale: rng.random_range(1.0..8.0),
        lambda: rng.random(),
        lambda_prime: rng.random(),
        negative_term: if rng.random() {
            NegativeTerm::PairwiseSigmoid
        } else {
            NegativeTerm::Estimator
        },
        ..LossConfig::default()
    }
}

/// Graph estimators per row of an instance, target `f̄`.
fn graph_estimators(inst: &Instance, cfg: &LossConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let t = g.constant(rows_tensor(&inst.f_bar))?;
    let p = g.constant(rows_tensor(&inst.positives))?;
    let n = g.constant(negatives_tensor(&inst.negatives))?;
    let h = estimator_batch(&mut g, t, p, n, cfg.tau)?;
    let (hm, _) = estimator_margin_batch(&mut g, t, p, n, cfg)?;
    Ok((g.value(h).data().to_vec(), g.value(hm).data().to_vec()))
}

/// Standalone graph evaluation of the two cross-level terms and GCLD.
fn graph_cross_level(inst: &Instance, cfg: &LossConfig) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let f = g.constant(rows_tensor(&inst.f_bar))?;
    let gb = g.constant(rows_tensor(&inst.g_bar))?;
    let ic = clusters(&inst.image_centroids, &inst.image_assign);
    let pc = clusters(&inst.patch_centroids, &inst.patch_assign);
    let ti = cross_level_term_image(&mut g, f, &pc, cfg.tau)?;
    let tp = cross_level_term_patch(&mut g, gb, &ic, cfg.tau)?;
    let (gcld, _, _) = gcld_loss(&mut g, f, gb, &ic, &pc, cfg.lambda, cfg.tau)?;
    let sum = |g: &Graph, v: Var| g.value(v).data().iter().sum::<f64>();
    Ok((sum(&g, ti), sum(&g, tp), g.value(gcld).item()))
}

/// Graph against loop oracle for every term on `instances` random batches
/// each (batch ≤ 8, d ≤ 16), with random hyperparameters.
pub fn check_oracle_equivalence(instances: usize) -> Result<Vec<CheckResult>> {
    let names = [
        "oracle/estimator",
        "oracle/margin-estimator",
        "oracle/nce-total",
        "oracle/nce-image",
        "oracle/nce-patch",
        "oracle/cross-level-image",
        "oracle/cross-level-patch",
        "oracle/gcld",
        "oracle/cpcd",
    ];
    let mut worst = [0.0f64; 9];
    let mut rng = stream(0, &[TAG_ORACLE]);
    for _ in 0..instances {
        let b = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=b.min(4));
        let inst = random_instance(b, d, n, k, &mut rng)?;
        let cfg = random_config(&mut rng);

        let (h, hm) = graph_estimators(&inst, &cfg)?;
        for i in 0..b {
            let e = oracle::estimator(&inst.f_bar[i], &inst.positives[i], &inst.negatives[i], cfg.tau);
            let em = oracle::estimator_margin(&inst.f_bar[i], &inst.positives[i], &inst.negatives[i], &cfg);
            worst[0] = worst[0].max((h[i] - e).abs());
            worst[1] = worst[1].max((hm[i] - em).abs());
        }
        let o = oracle::evaluate(&inst, &cfg);
        let v = graph_values(&inst, &cfg)?;
        let (ti, tp, gcld) = graph_cross_level(&inst, &cfg)?;
        let pairs = [
            (v.nce_total, o.nce_total),
            (v.nce_image, o.nce_image),
            (v.nce_patch, o.nce_patch),
            (ti, o.gcld_image_term),
            (tp, o.gcld_patch_term),
            (gcld, o.gcld),
            (v.cpcd, o.cpcd),
        ];
        for (slot, (a, b)) in pairs.into_iter().enumerate() {
            worst[slot + 2] = worst[slot + 2].max((a - b).abs());
        }
    }
    Ok(names
        .iter()
        .zip(worst)
        .map(|(name, e)| CheckResult::within(*name, e, ORACLE_TOLERANCE, format!("{instances} instances")))
        .collect())
}

/// With `m = 0, s = 1` the margin estimator must equal the plain one.
pub fn check_margin_reduction(instances: usize) -> Result<CheckResult> {
    let mut rng = stream(0, &[TAG_REDUCTION]);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let b = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let n = rng.random_range(1..=8);
        let tau = rng.random_range(0.1..1.0);
        let t = unit_rows(b, d, &mut rng);
        let p = unit_rows(b, d, &mut rng);
        let negs: Vec<Vec<Vec<f64>>> = (0..b).map(|_| unit_rows(n, d, &mut rng)).collect();
        let cfg = LossConfig {
            tau,
            margin: 0.0,
            scale: 1.0,
            ..LossConfig::default()
        };
        let mut g = Graph::new();
        let tv = g.constant(rows_tensor(&t))?;
        let pv = g.constant(rows_tensor(&p))?;
        let nv = g.constant(negatives_tensor(&negs))?;
        let h = estimator_batch(&mut g, tv, pv, nv, tau)?;
        let (hm, _) = estimator_margin_batch(&mut g, tv, pv, nv, &cfg)?;
        for i in 0..b {
            let plain = crate::loss::nce_estimator(&t[i], &p[i], &negs[i], tau)?;
            let margin = crate::loss::nce_estimator_margin(&t[i], &p[i], &negs[i], tau, 0.0, 1.0)?;
            worst = worst
                .max((g.value(h).data()[i] - g.value(hm).data()[i]).abs())
                .max((plain - margin).abs());
        }
    }
    Ok(CheckResult::within(
        "margin/reduction",
        worst,
        REDUCTION_TOLERANCE,
        format!("{instances} instances"),
    ))
}

/// Each `−log h′` anchor term must not increase as the margin grows from 0
/// to 0.25 to 0.5, over negative cosines on `[−0.9, 0.9]`.
pub fn check_margin_monotonicity() -> Result<CheckResult> {
    let margins = [0.0, 0.25, 0.5];
    let grid: Vec<f64> = (0..=36).map(|i| -0.9 + 0.05 * i as f64).collect();
    let mut violations = 0usize;
    let mut evaluated = 0usize;
    let mut first = String::new();
    for &tau in &[0.2, 0.4, 1.0] {
        for &scale in &[1.0, 6.0] {
            for &pos in &[-0.5f64, 0.0, 0.8] {
                for &neg in &grid {
                    let t = vec![1.0, 0.0];
                    let p = vec![pos, (1.0 - pos * pos).sqrt()];
                    let nv = vec![neg, -(1.0 - neg * neg).sqrt()];
                    let mut prev = f64::INFINITY;
                    for &margin in &margins {
                        let cfg = LossConfig {
                            tau,
                            margin,
                            scale,
                            ..LossConfig::default()
                        };
                        let mut g = Graph::new();
                        let tv = g.constant(rows_tensor(&[t.clone()]))?;
                        let pvar = g.constant(rows_tensor(&[p.clone()]))?;
                        let nvar = g.constant(negatives_tensor(&[vec![nv.clone()]]))?;
                        let (h, _) = estimator_margin_batch(&mut g, tv, pvar, nvar, &cfg)?;
                        let term = -g.value(h).data()[0].ln();
                        evaluated += 1;
                        if term > prev {
                            violations += 1;
                            if first.is_empty() {
                                first = format!(
                                    "; first at tau={tau} s={scale} pos={pos} neg={neg:.2} m={margin}: {term} > {prev}"
                                );
                            }
                        }
                        prev = term;
                    }
                }
            }
        }
    }
    Ok(CheckResult::within(
        "margin/monotonicity",
        violations as f64,
        0.0,
        format!("{evaluated} terms, {violations} violations{first}"),
    ))
}

/// Three bundles of 20 unit vectors around orthogonal directions.
pub fn bundles(seed: u64, dim: usize) -> (Tensor, Vec<usize>) {
    let mut rng = stream(seed, &[TAG_BUNDLES]);
    let mut centres: Vec<Vec<f64>> = Vec::new();
    while centres.len() < 3 {
        let mut v = random_unit(dim, &mut rng);
        for c in &centres {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            centres.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..20 {
            let noise = random_unit(dim, &mut rng);
            let v: Vec<f64> = centre.iter().zip(&noise).map(|(a, b)| a + 0.12 * b).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.push(v.into_iter().map(|x| x / n).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    // Interleave so cluster identity is not given away by position.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    (rows_tensor(&rows), labels)
}

fn cosine_extremes(x: &Tensor, labels: &[usize]) -> (f64, f64) {
    let mut min_intra = f64::INFINITY;
    let mut max_inter = f64::NEG_INFINITY;
    for i in 0..x.rows() {
        for j in (i + 1)..x.rows() {
            let c: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            if labels[i] == labels[j] {
                min_intra = min_intra.min(c);
            } else {
                max_inter = max_inter.max(c);
            }
        }
    }
    (min_intra, max_inter)
}

/// Spherical k-means must recover three well separated bundles exactly
/// within 20 iterations for every seed.
pub fn check_kmeans_recovery(seeds: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for seed in 0..seeds {
        let (x, labels) = bundles(seed, 16);
        let (intra, inter) = cosine_extremes(&x, &labels);
        let model = spherical_kmeans(&x, 3, 20, seed)?;
        let ari = adjusted_rand_index(&labels, &model.assignments)?;
        let mut gap = 1.0 - ari;
        if !(intra > 0.95 && inter < 0.3) || model.iterations > 20 {
            gap = gap.max(1.0);
        }
        if gap > 0.0 {
            detail.push(format!(
                "seed {seed}: ari {ari:.4}, {} iters, intra {intra:.3}, inter {inter:.3}",
                model.iterations
            ));
        }
        worst = worst.max(gap);
    }
    let detail = if detail.is_empty() {
        format!("{seeds}/{seeds} seeds with ARI 1")
    } else {
        detail.join("; ")
    };
    Ok(CheckResult::within("kmeans/recovery", worst, 0.0, detail))
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let perp: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - c * y).powi(2))
        .sum::<f64>()
        .sqrt();
    perp.atan2(c)
}

/// Unit norms after an update, the two-dimensional worked example, and
/// convergence towards a constant target.
pub fn check_memory_bank() -> Result<Vec<CheckResult>> {
    let mut rng = stream(0, &[TAG_BANK]);
    let mut bank = MemoryBank::init(64, 16, 11)?;
    let fresh: Vec<Vec<f64>> = (0..64).map(|_| random_unit(16, &mut rng)).collect();
    bank.update_epoch(fresh.iter().enumerate().map(|(i, r)| (i, r.as_slice())))?;
    let norm_err = (0..bank.len())
        .map(|i| {
            let r = bank.rows().row(i);
            (r.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs()
        })
        .fold(0.0, f64::max);

    let mut small = MemoryBank::from_tensor(rows_tensor(&[vec![1.0, 0.0]]))?;
    small.update_epoch([(0usize, [0.0, 1.0].as_slice())])?;
    let expected = std::f64::consts::FRAC_1_SQRT_2;
    let example_err = small
        .rows()
        .row(0)
        .iter()
        .map(|v| (v - expected).abs())
        .fold(0.0, f64::max);

    let target = random_unit(16, &mut rng);
    let mut tracked = MemoryBank::init(1, 16, 12)?;
    for _ in 0..20 {
        tracked.update_epoch([(0usize, target.as_slice())])?;
    }
    let final_angle = angle(tracked.rows().row(0), &target);

    Ok(vec![
        CheckResult::within("bank/unit-norm", norm_err, 1e-9, "64 rows after one update"),
        CheckResult::within("bank/worked-example", example_err, 1e-8, "[1,0] with [0,1]"),
        CheckResult::within("bank/convergence", final_angle, 1e-3, "angle after 20 updates"),
    ])
}

#[cfg(test)]
mod tests;
