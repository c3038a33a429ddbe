//! Model variants, parameter storage, and seed-deterministic initialization.
//!
//! Two spatial backbones share a pipeline — per-instance MLP embedding,
//! squaring onto a grid, optional positional encoding, then either two
//! transformer blocks or two convolutional residual blocks — and three
//! permutation-invariant aggregators (attention pooling, mean, max) serve as
//! baselines.

mod blocks;
mod checkpoint;

pub use blocks::{
    abmil_pool, backbone_padded, baseline_pool, classify, forward_backbone, forward_bag,
    mlp_embed, pad_indices, ppeg, residual_block, self_attention, sinusoidal_pe, squaring,
    transformer_block, BagForward, PoolMode,
};
pub use checkpoint::{load_params, save_params, CheckpointError};

use crate::rng::{stream, tag};
use crate::tensor::{NodeId, Scalar, Tape, Tensor};
use rand::Rng;
use std::collections::HashMap;
use thiserror::Error;

pub const EMBED_DIM: usize = 128;
const ABMIL_HIDDEN: usize = 64;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Transformer,
    Cnn,
    AbmilBaseline,
    MeanPool,
    MaxPool,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Transformer => "transformer",
            Variant::Cnn => "cnn",
            Variant::AbmilBaseline => "abmil-baseline",
            Variant::MeanPool => "mean-pool",
            Variant::MaxPool => "max-pool",
        }
    }

    /// Spatial variants produce per-slot features and admit the equivalence
    /// regularizer; pooled baselines do not.
    pub fn is_spatial(&self) -> bool {
        matches!(self, Variant::Transformer | Variant::Cnn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeMode {
    None,
    Sinusoidal,
    Ppeg,
}

impl PeMode {
    pub fn name(&self) -> &'static str {
        match self {
            PeMode::None => "none",
            PeMode::Sinusoidal => "sinusoidal",
            PeMode::Ppeg => "ppeg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Binary,
    Multiclass(usize),
    /// Discrete-time hazards over `J` intervals.
    Survival(usize),
}

impl Head {
    pub fn width(&self) -> usize {
        match *self {
            Head::Binary => 1,
            Head::Multiclass(c) => c,
            Head::Survival(j) => j,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 5e-4, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub embed_dim: usize,
    /// Attention projection width (d_k) of the transformer blocks.
    pub attn_dim: usize,
    pub lambda: f64,
    pub pe: PeMode,
    pub head: Head,
    pub opt: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Also apply the task loss to the shuffled branch (off by default).
    pub classify_shuffled: bool,
    /// Weight init is uniform in ±init_gain/sqrt(fan_in). The default is the
    /// Kaiming-uniform bound; 1.0 gives the plain 1/sqrt(fan_in) rule.
    pub init_gain: f64,
    /// Zero-initialize the positional-encoding kernels and the gain that
    /// closes each residual branch, so the backbone starts as an identity
    /// map over the embedded instances. Spatial pathways then grow from the
    /// task signal instead of starting as random mixing, and the
    /// equivalence loss starts at zero rather than as a large shock.
    pub identity_start: bool,
}

impl ModelConfig {
    pub fn new(variant: Variant, input_dim: usize) -> Self {
        Self {
            variant,
            input_dim,
            embed_dim: EMBED_DIM,
            attn_dim: 64,
            lambda: if variant.is_spatial() { 1.0 } else { 0.0 },
            pe: PeMode::Ppeg,
            head: Head::Binary,
            opt: OptimizerConfig::default(),
            epochs: 200,
            seed: 0,
            classify_shuffled: false,
            init_gain: 6f64.sqrt(),
            identity_start: true,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.lambda < 0.0 {
            return Err(NetError::Config(format!(
                "lambda must satisfy lambda >= 0, got {}",
                self.lambda
            )));
        }
        if self.input_dim == 0 || self.embed_dim == 0 || self.attn_dim == 0 {
            return Err(NetError::Config("dimensions must be positive".into()));
        }
        if let Head::Survival(j) = self.head {
            if j < 2 {
                return Err(NetError::Config(format!("survival head needs J >= 2 bins, got {j}")));
            }
        }
        if let Head::Multiclass(c) = self.head {
            if c < 2 {
                return Err(NetError::Config(format!("multiclass head needs C >= 2, got {c}")));
            }
        }
        if self.pe == PeMode::Sinusoidal && self.embed_dim % 2 != 0 {
            return Err(NetError::Config("sinusoidal encoding needs an even embed_dim".into()));
        }
        if !self.variant.is_spatial() && self.lambda > 0.0 {
            return Err(NetError::Config(format!(
                "variant {} has no per-slot features; the equivalence regularizer requires lambda = 0",
                self.variant.name()
            )));
        }
        Ok(())
    }

    /// Width of the first embedding stage.
    pub fn hidden_dim(&self) -> usize {
        (self.input_dim / 2).max(1)
    }
}

/// Named parameter tensors in a fixed registration order.
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn register(&mut self, name: &str, tensor: Tensor<T>) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(|i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A model: config plus its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Model<T> {
    /// Build and initialize parameters; identical seeds give bit-identical
    /// parameters. Weights are uniform in ±1/sqrt(fan_in), biases zero,
    /// normalization scales one.
    pub fn init(config: ModelConfig) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = stream(config.seed, &[tag::PARAM_INIT]);
        let mut params = ParamSet::new();
        let d = config.input_dim;
        let h1 = config.hidden_dim();
        let e = config.embed_dim;
        let dk = config.attn_dim;

        let gain = config.init_gain;
        let zero_res = config.identity_start;
        let mut weight = |params: &mut ParamSet<T>, name: &str, shape: Vec<usize>, fan_in: usize| {
            let bound = gain / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<T> =
                (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
            params.register(name, Tensor::new(shape, data).expect("init shape"));
        };
        let zeros = |params: &mut ParamSet<T>, name: &str, shape: Vec<usize>| {
            params.register(name, Tensor::zeros(shape));
        };
        let gains = |params: &mut ParamSet<T>, name: &str, len: usize, zeroed: bool| {
            let fill = if zeroed { T::zero() } else { T::one() };
            params.register(name, Tensor::new(vec![len], vec![fill; len]).unwrap());
        };

        weight(&mut params, "embed.l1.w", vec![d, h1], d);
        zeros(&mut params, "embed.l1.b", vec![h1]);
        weight(&mut params, "embed.l2.w", vec![h1, e], h1);
        zeros(&mut params, "embed.l2.b", vec![e]);

        if config.variant.is_spatial() && config.pe == PeMode::Ppeg {
            if zero_res {
                zeros(&mut params, "ppeg.k7", vec![7, 7, e]);
                zeros(&mut params, "ppeg.k5", vec![5, 5, e]);
                zeros(&mut params, "ppeg.k3", vec![3, 3, e]);
            } else {
                weight(&mut params, "ppeg.k7", vec![7, 7, e], 49);
                weight(&mut params, "ppeg.k5", vec![5, 5, e], 25);
                weight(&mut params, "ppeg.k3", vec![3, 3, e], 9);
            }
        }

        match config.variant {
            Variant::Transformer => {
                for i in 0..2 {
                    // pre-norm blocks: zeroing the branch-input gains makes
                    // each block start as an identity map
                    gains(&mut params, &format!("tf{i}.ln1.g"), e, zero_res);
                    zeros(&mut params, &format!("tf{i}.ln1.b"), vec![e]);
                    weight(&mut params, &format!("tf{i}.wq"), vec![e, dk], e);
                    weight(&mut params, &format!("tf{i}.wk"), vec![e, dk], e);
                    weight(&mut params, &format!("tf{i}.wv"), vec![e, dk], e);
                    weight(&mut params, &format!("tf{i}.proj"), vec![dk, e], dk);
                    gains(&mut params, &format!("tf{i}.ln2.g"), e, zero_res);
                    zeros(&mut params, &format!("tf{i}.ln2.b"), vec![e]);
                    weight(&mut params, &format!("tf{i}.ff1.w"), vec![e, 4 * e], e);
                    zeros(&mut params, &format!("tf{i}.ff1.b"), vec![4 * e]);
                    weight(&mut params, &format!("tf{i}.ff2.w"), vec![4 * e, e], 4 * e);
                    zeros(&mut params, &format!("tf{i}.ff2.b"), vec![e]);
                }
            }
            Variant::Cnn => {
                for i in 0..2 {
                    weight(&mut params, &format!("res{i}.conv1"), vec![3, 3, e, e], 9 * e);
                    gains(&mut params, &format!("res{i}.n1.g"), e, false);
                    zeros(&mut params, &format!("res{i}.n1.b"), vec![e]);
                    weight(&mut params, &format!("res{i}.conv2"), vec![3, 3, e, e], 9 * e);
                    // zeroing the closing gain makes the block start as a
                    // pass-through
                    gains(&mut params, &format!("res{i}.n2.g"), e, zero_res);
                    zeros(&mut params, &format!("res{i}.n2.b"), vec![e]);
                }
            }
            Variant::AbmilBaseline => {
                weight(&mut params, "abmil.v", vec![ABMIL_HIDDEN, e], e);
                weight(&mut params, "abmil.w", vec![ABMIL_HIDDEN, 1], ABMIL_HIDDEN);
            }
            Variant::MeanPool | Variant::MaxPool => {}
        }

        weight(&mut params, "head.w", vec![e, config.head.width()], e);
        zeros(&mut params, "head.b", vec![config.head.width()]);

        Ok(Self { config, params })
    }

    /// Bind every parameter onto a tape as a leaf, in registration order.
    pub fn bind<'m>(&'m self, tape: &mut Tape<T>, trainable: bool) -> Binding<'m, T> {
        let ids =
            self.params.entries.iter().map(|(_, t)| tape.leaf(t.clone(), trainable)).collect();
        Binding { model: self, ids }
    }
}

/// Parameters of one model bound to one tape.
pub struct Binding<'m, T> {
    pub model: &'m Model<T>,
    ids: Vec<NodeId>,
}

impl<'m, T: Scalar> Binding<'m, T> {
    pub fn id(&self, name: &str) -> NodeId {
        let pos = self
            .model
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} not registered for this variant"));
        self.ids[pos]
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Leaf node ids in registration order, for gradient collection.
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}
