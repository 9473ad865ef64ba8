//! The convolutional encoder, its two projection heads, and checkpoints.

mod checkpoint;
mod embedding;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use embedding::{normalize_embeddings, EmbeddingBatch, Level};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{Image, JigsawPatchSet};
use crate::error::{CpcdError, Result};
use crate::rng::{purpose, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Output channels of each conv layer; 2 to 4 layers.
    pub conv_channels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub kernel_size: usize,
    pub feature_dim: usize,
    pub head_dim: usize,
    /// Patches per jigsaw set; fixes the input width of the patch head.
    pub patch_count: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            conv_channels: vec![8, 16],
            conv_strides: vec![2, 2],
            kernel_size: 3,
            feature_dim: 64,
            head_dim: 128,
            patch_count: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.conv_channels.len();
        if !(2..=4).contains(&n) {
            return Err(CpcdError::config(format!("encoder needs 2 to 4 conv layers, got {n}")));
        }
        if self.conv_strides.len() != n {
            return Err(CpcdError::config("conv_strides must match conv_channels in length"));
        }
        let zeros = [self.in_channels, self.kernel_size, self.feature_dim, self.head_dim, self.patch_count];
        if zeros.contains(&0) || self.conv_channels.contains(&0) || self.conv_strides.contains(&0) {
            return Err(CpcdError::config("encoder dimensions must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(CpcdError::config("kernel_size must be odd for same padding"));
        }
        Ok(())
    }
}

/// Which representation [`Network::embed`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureStage {
    /// Encoder output, before any projection head.
    Encoder,
    /// Output of the image-level head.
    Head,
}

/// Encoder weights plus the image head `f` and the patch head `g`, held as
/// one ordered list of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: EncoderConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Positions of each layer's tensors within the parameter list.
const HEAD_TENSORS: usize = 6;

impl Network {
    /// He-normal conv and linear weights, Xavier-normal heads, zero biases.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[purpose::INIT]);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let k = config.kernel_size;
        let mut cin = config.in_channels;
        for (i, &cout) in config.conv_channels.iter().enumerate() {
            let std = (2.0 / (k * k * cin) as f64).sqrt();
            names.push(format!("conv{i}.weight"));
            params.push(normal(&[k, k, cin, cout], std, &mut rng));
            names.push(format!("conv{i}.bias"));
            params.push(Tensor::zeros([cout]));
            cin = cout;
        }
        let heads = [
            ("fc", cin, config.feature_dim, (2.0 / cin as f64).sqrt()),
            (
                "head_f",
                config.feature_dim,
                config.head_dim,
                (2.0 / (config.feature_dim + config.head_dim) as f64).sqrt(),
            ),
            (
                "head_g",
                config.patch_count * config.feature_dim,
                config.head_dim,
                (2.0 / (config.patch_count * config.feature_dim + config.head_dim) as f64).sqrt(),
            ),
        ];
        for (name, fan_in, fan_out, std) in heads {
            names.push(format!("{name}.weight"));
            params.push(normal(&[fan_in, fan_out], std, &mut rng));
            names.push(format!("{name}.bias"));
            params.push(Tensor::zeros([fan_out]));
        }
        Ok(Network {
            config,
            names,
            params,
        })
    }

    /// Rebuilds a network from named tensors, checking every shape against
    /// what `config` implies.
    pub fn from_named(config: EncoderConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let template = Network::new(config, 0)?;
        let mut params = Vec::with_capacity(template.params.len());
        for (name, expected) in template.names.iter().zip(&template.params) {
            let t = tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| CpcdError::input(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != expected.shape() {
                return Err(CpcdError::ShapeMismatch {
                    op: "checkpoint tensor",
                    lhs: expected.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(CpcdError::NonFinite(format!("checkpoint tensor {name}")));
            }
            params.push(t.clone().with_requires_grad(false));
        }
        Ok(Network {
            config: template.config,
            names: template.names,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.params.iter().cloned()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a trainable leaf, in list order.
    pub fn bind(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.params.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Registers every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.params.iter().map(|t| g.constant(t.clone())).collect()
    }

    fn check_bound(&self, p: &[Var]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(CpcdError::input(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                p.len()
            )));
        }
        Ok(())
    }

    /// `B × H × W × C` images to `B × feature_dim` features.
    pub fn encode(&self, g: &mut Graph, p: &[Var], images: Var) -> Result<Var> {
        self.check_bound(p)?;
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[3] != self.config.in_channels {
            return Err(CpcdError::ShapeMismatch {
                op: "encode",
                lhs: vec![0, 0, 0, self.config.in_channels],
                rhs: s,
            });
        }
        let pad = self.config.kernel_size / 2;
        // Pixels live in [0, 1]; centring them keeps the all-positive
        // post-ReLU features from sharing one dominant direction.
        let mut x = g.add_scalar(images, -0.5);
        for (i, &stride) in self.config.conv_strides.iter().enumerate() {
            let y = g.conv2d(x, p[2 * i], stride, pad)?;
            let y = g.add_bias(y, p[2 * i + 1])?;
            x = g.relu(y);
        }
        let pooled = g.global_avg_pool(x)?;
        let fc = p.len() - HEAD_TENSORS;
        linear(g, pooled, p[fc], p[fc + 1])
    }

    /// `(B·P) × h × w × C` patches, grouped by parent, to
    /// `B × (P·feature_dim)` concatenated patch features.
    pub fn encode_patches(&self, g: &mut Graph, p: &[Var], patches: Var) -> Result<Var> {
        let pc = self.config.patch_count;
        let n = g.shape(patches)[0];
        if n % pc != 0 {
            return Err(CpcdError::input(format!(
                "{n} patches do not form whole sets of {pc}"
            )));
        }
        let feats = self.encode(g, p, patches)?;
        g.reshape(feats, [n / pc, pc * self.config.feature_dim])
    }

    /// Image head `f`: `B × feature_dim` to `B × head_dim`.
    pub fn project_image(&self, g: &mut Graph, p: &[Var], feats: Var) -> Result<Var> {
        self.check_bound(p)?;
        let i = p.len() - 4;
        linear(g, feats, p[i], p[i + 1])
    }

    /// Patch head `g`: `B × (P·feature_dim)` to `B × head_dim`.
    pub fn project_patches(&self, g: &mut Graph, p: &[Var], feats: Var) -> Result<Var> {
        self.check_bound(p)?;
        let i = p.len() - 2;
        linear(g, feats, p[i], p[i + 1])
    }

    /// Un-augmented forward pass without gradients, in chunks of 64 images.
    pub fn embed(&self, images: &[&Image], stage: FeatureStage) -> Result<EmbeddingBatch> {
        let mut rows = Vec::new();
        let mut width = 0;
        for chunk in images.chunks(64) {
            let mut g = Graph::new();
            let p = self.bind_frozen(&mut g)?;
            let x = g.constant(images_tensor(chunk)?)?;
            let mut y = self.encode(&mut g, &p, x)?;
            if stage == FeatureStage::Head {
                y = self.project_image(&mut g, &p, y)?;
            }
            width = g.value(y).cols();
            rows.extend_from_slice(g.value(y).data());
        }
        let n = rows.len() / width.max(1);
        Ok(EmbeddingBatch::new(Tensor::new([n, width], rows)?, Level::Image))
    }
}

/// `x · W + b` for `x: B × in`, `W: in × out`.
pub fn linear(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = g.matmul(x, weight)?;
    g.add_bias(y, bias)
}

fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// Stacks same-shape images into a `B × H × W × C` tensor.
pub fn images_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| CpcdError::input("empty image batch"))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(images.len() * first.pixels().len());
    for img in images {
        if img.shape() != shape {
            return Err(CpcdError::ShapeMismatch {
                op: "image batch",
                lhs: shape.to_vec(),
                rhs: img.shape().to_vec(),
            });
        }
        data.extend_from_slice(img.pixels());
    }
    Tensor::new([images.len(), shape[0], shape[1], shape[2]], data)
}

/// Flattens jigsaw sets into a `(B·P) × h × w × C` tensor, set by set in
/// shuffled patch order. Sets with differing patch counts are rejected.
pub fn patches_tensor(sets: &[&JigsawPatchSet]) -> Result<Tensor> {
    let first = sets.first().ok_or_else(|| CpcdError::input("empty patch batch"))?;
    let pc = first.patch_count();
    if let Some(bad) = sets.iter().find(|s| s.patch_count() != pc) {
        return Err(CpcdError::input(format!(
            "ragged patch sets: {} and {} patches",
            pc,
            bad.patch_count()
        )));
    }
    let patches: Vec<&Image> = sets.iter().flat_map(|s| s.patches.iter()).collect();
    images_tensor(&patches)
}

#[cfg(test)]
mod tests;
