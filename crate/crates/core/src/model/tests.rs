use super::*;
use crate::autodiff::finite_difference_check;
use crate::data::{make_jigsaw_with, JitterFactors};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        conv_channels: vec![3, 4],
        feature_dim: 5,
        head_dim: 6,
        ..EncoderConfig::default()
    }
}

fn random_image(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..size * size * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    Image::new(size, size, 3, px).unwrap()
}

#[test]
fn image_batch_shape_contract() {
    let net = Network::new(EncoderConfig::default(), 1).unwrap();
    let imgs: Vec<Image> = (0..32).map(|i| random_image(64, i)).collect();
    let refs: Vec<&Image> = imgs.iter().collect();
    let mut g = Graph::new();
    let p = net.bind(&mut g).unwrap();
    let x = g.constant(images_tensor(&refs).unwrap()).unwrap();
    let f = net.encode(&mut g, &p, x).unwrap();
    assert_eq!(g.shape(f), &[32, 64]);
    let z = net.project_image(&mut g, &p, f).unwrap();
    assert_eq!(g.shape(z), &[32, 128]);
}

#[test]
fn mixed_image_shapes_are_rejected() {
    let a = random_image(8, 0);
    let b = random_image(6, 1);
    assert!(images_tensor(&[&a, &b]).is_err());
}

#[test]
fn zero_weights_give_zero_features() {
    let mut net = Network::new(EncoderConfig::default(), 1).unwrap();
    net.params_mut().iter_mut().for_each(|t| t.data_mut().fill(0.0));
    let img = random_image(16, 2);
    let e = net.embed(&[&img], FeatureStage::Encoder).unwrap();
    assert!(e.data().data().iter().all(|&v| v == 0.0));
}

#[test]
fn parameter_count_matches_layers() {
    let net = Network::new(EncoderConfig::default(), 0).unwrap();
    let expected = (3 * 3 * 3 * 8 + 8) + (3 * 3 * 8 * 16 + 16) + (16 * 64 + 64) + (64 * 128 + 128) + (256 * 128 + 128);
    assert_eq!(net.param_count(), expected);
    assert_eq!(net.names()[0], "conv0.weight");
}

#[test]
fn invalid_depth_is_rejected() {
    let cfg = EncoderConfig {
        conv_channels: vec![4],
        conv_strides: vec![1],
        ..EncoderConfig::default()
    };
    assert!(matches!(Network::new(cfg, 0), Err(CpcdError::InvalidConfig(_))));
}

#[test]
fn patch_rows_concatenate_and_follow_order() {
    let net = Network::new(EncoderConfig::default(), 3).unwrap();
    let img = random_image(16, 4);
    let set = make_jigsaw_with(&img, 0, 2, 8, (0, 0), vec![0, 1, 2, 3], JitterFactors::IDENTITY).unwrap();
    let swapped = make_jigsaw_with(&img, 0, 2, 8, (0, 0), vec![1, 0, 2, 3], JitterFactors::IDENTITY).unwrap();
    let run = |s: &JigsawPatchSet| {
        let mut g = Graph::new();
        let p = net.bind_frozen(&mut g).unwrap();
        let x = g.constant(patches_tensor(&[s]).unwrap()).unwrap();
        let y = net.encode_patches(&mut g, &p, x).unwrap();
        g.value(y).clone()
    };
    let a = run(&set);
    let b = run(&swapped);
    assert_eq!(a.shape(), &[1, 256]);
    assert_eq!(a.data()[..64], b.data()[64..128]);
    assert_eq!(a.data()[64..128], b.data()[..64]);
    assert_eq!(a.data()[128..], b.data()[128..]);

    let flat = Image::filled(16, 16, 3, 0.3);
    let same = make_jigsaw_with(&flat, 0, 2, 8, (0, 0), vec![2, 0, 3, 1], JitterFactors::IDENTITY).unwrap();
    let c = run(&same);
    assert!(c.data().chunks(64).all(|blk| blk == &c.data()[..64]));
}

#[test]
fn ragged_patch_sets_are_rejected() {
    let img = random_image(12, 0);
    let two = make_jigsaw_with(&img, 0, 2, 6, (0, 0), vec![0, 1, 2, 3], JitterFactors::IDENTITY).unwrap();
    let three = make_jigsaw_with(&img, 1, 3, 4, (0, 0), (0..9).collect(), JitterFactors::IDENTITY).unwrap();
    assert!(patches_tensor(&[&two, &three]).is_err());
}

#[test]
fn identity_head_passes_input_through() {
    let mut g = Graph::new();
    let mut eye = Tensor::zeros([128, 128]);
    (0..128).for_each(|i| eye.data_mut()[i * 128 + i] = 1.0);
    let w = g.param(eye).unwrap();
    let b = g.param(Tensor::zeros([128])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::new([3, 128], (0..384).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let xv = g.constant(x.clone()).unwrap();
    let y = linear(&mut g, xv, w, b).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn head_width_mismatch_is_rejected() {
    let net = Network::new(EncoderConfig::default(), 0).unwrap();
    let mut g = Graph::new();
    let p = net.bind(&mut g).unwrap();
    let x = g.constant(Tensor::zeros([2, 63])).unwrap();
    assert!(matches!(net.project_image(&mut g, &p, x), Err(CpcdError::ShapeMismatch { .. })));
}

#[test]
fn first_conv_weight_gradient_matches_differences() {
    let net = Network::new(small_config(), 7).unwrap();
    let img = random_image(8, 8);
    let x = images_tensor(&[&img, &random_image(8, 9)]).unwrap();
    let params = net.params().to_vec();
    let report = finite_difference_check(
        |g, v| {
            let mut p = net.bind_frozen(g)?;
            p[0] = v[0];
            let xv = g.constant(x.clone())?;
            let f = net.encode(g, &p, xv)?;
            Ok(g.mean(f))
        },
        &[params[0].clone()],
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn head_weights_gradient_matches_differences() {
    let net = Network::new(small_config(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let feats = Tensor::new([3, 5], (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let n = net.params().len();
    let point = vec![net.params()[n - 4].clone(), net.params()[n - 3].clone()];
    let report = finite_difference_check(
        |g, v| {
            let x = g.constant(feats.clone())?;
            let y = linear(g, x, v[0], v[1])?;
            let y = g.l2_normalize(y)?;
            let sq = g.mul(y, y)?;
            let c = g.constant(Tensor::new([3, 6], (0..18).map(|i| i as f64 / 18.0).collect())?)?;
            let w = g.mul(sq, c)?;
            Ok(g.sum(w))
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn shared_weights_move_both_branches() {
    let mut net = Network::new(small_config(), 2).unwrap();
    let img = random_image(8, 3);
    let set = make_jigsaw_with(&img, 0, 2, 4, (0, 0), vec![3, 1, 0, 2], JitterFactors::IDENTITY).unwrap();
    let both = |net: &Network| {
        let mut g = Graph::new();
        let p = net.bind_frozen(&mut g).unwrap();
        let x = g.constant(images_tensor(&[&img]).unwrap()).unwrap();
        let a = net.encode(&mut g, &p, x).unwrap();
        let y = g.constant(patches_tensor(&[&set]).unwrap()).unwrap();
        let b = net.encode_patches(&mut g, &p, y).unwrap();
        (g.value(a).clone(), g.value(b).clone())
    };
    let (a0, b0) = both(&net);
    net.params_mut()[0].data_mut().iter_mut().for_each(|w| *w += 0.1);
    let (a1, b1) = both(&net);
    assert_ne!(a0, a1);
    assert_ne!(b0, b1);
}

#[test]
fn normalize_embeddings_contract() {
    let mut row = vec![0.0; 8];
    row[0] = 3.0;
    row[1] = 4.0;
    let b = EmbeddingBatch::new(Tensor::from_rows(&[row]).unwrap(), Level::Image);
    let n = normalize_embeddings(&b).unwrap();
    assert!(n.is_normalized());
    assert_eq!(&n.row(0)[..3], &[0.6, 0.8, 0.0]);
    let again = normalize_embeddings(&n).unwrap();
    for (x, y) in again.row(0).iter().zip(n.row(0)) {
        assert!((x - y).abs() < 1e-12);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = Tensor::new([1000, 16], (0..16000).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let n = normalize_embeddings(&EmbeddingBatch::new(t, Level::Patch)).unwrap();
    for i in 0..1000 {
        let norm: f64 = n.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    let z = EmbeddingBatch::new(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap(), Level::Image);
    assert!(matches!(normalize_embeddings(&z), Err(CpcdError::ZeroRow { row: 1, .. })));
}

#[test]
fn checkpoint_rebuilds_network() {
    let net = Network::new(EncoderConfig::default(), 9).unwrap();
    let rebuilt = Network::from_named(net.config().clone(), &net.named_tensors()).unwrap();
    assert_eq!(rebuilt, net);
    let other = EncoderConfig {
        feature_dim: 32,
        ..EncoderConfig::default()
    };
    assert!(Network::from_named(other, &net.named_tensors()).is_err());
}

#[test]
fn embed_is_deterministic_and_seed_dependent() {
    let img = random_image(16, 1);
    let a = Network::new(EncoderConfig::default(), 1).unwrap();
    let b = Network::new(EncoderConfig::default(), 2).unwrap();
    let ea = a.embed(&[&img], FeatureStage::Head).unwrap();
    assert_eq!(ea, a.embed(&[&img], FeatureStage::Head).unwrap());
    assert_ne!(ea, b.embed(&[&img], FeatureStage::Head).unwrap());
    assert_eq!(ea.dim(), 128);
}
