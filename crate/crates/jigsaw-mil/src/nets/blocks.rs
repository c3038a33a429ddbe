//! Network building blocks as tape programs.

use super::{Binding, PeMode, Variant};
use crate::tensor::{NodeId, Result, Scalar, Tape, Tensor, TensorError};

/// Two linear+ReLU stages: d -> d/2 -> embed width.
pub fn mlp_embed<T: Scalar>(tape: &mut Tape<T>, b: &Binding<T>, x: NodeId) -> Result<NodeId> {
    let h = tape.matmul(x, b.id("embed.l1.w"))?;
    let h = tape.add_bias(h, b.id("embed.l1.b"))?;
    let h = tape.relu(h)?;
    let y = tape.matmul(h, b.id("embed.l2.w"))?;
    let y = tape.add_bias(y, b.id("embed.l2.b"))?;
    tape.relu(y)
}

/// Grid side and duplicate-padding indices for squaring `n` instances:
/// the first `m*m - n` instances are repeated to fill the grid.
pub fn pad_indices(n: usize) -> (usize, Vec<usize>) {
    let m = (n as f64).sqrt().ceil() as usize;
    let pad = m * m - n;
    (m, (0..pad).collect())
}

/// Reshape a length-n instance sequence onto an m-by-m grid, duplicating
/// leading instances into the spare slots. Returns `(grid, m, pad_count)`.
pub fn squaring<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<(NodeId, usize, usize)> {
    let (n, c) = match *tape.value(x).shape() {
        [n, c] => (n, c),
        ref s => {
            return Err(TensorError::ShapeMismatch {
                op: "squaring",
                detail: format!("expected [n,c], got {s:?}"),
            })
        }
    };
    let (m, idx) = pad_indices(n);
    let padded = if idx.is_empty() {
        x
    } else {
        let extra = tape.gather(x, &idx)?;
        tape.concat(x, extra)?
    };
    let grid = tape.reshape(padded, vec![m, m, c])?;
    Ok((grid, m, idx.len()))
}

/// Fixed sinusoidal positional encoding table: `PE[p, 2i] = sin(p / 10000^(2i/c))`
/// and `PE[p, 2i+1] = cos(p / 10000^(2i/c))`. `c` must be even.
pub fn sinusoidal_pe<T: Scalar>(n: usize, c: usize) -> Result<Tensor<T>> {
    if c % 2 != 0 {
        return Err(TensorError::InvalidArg {
            op: "sinusoidal_pe",
            detail: format!("width must be even, got {c}"),
        });
    }
    let mut data = vec![T::zero(); n * c];
    for pos in 0..n {
        for i in 0..c / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / c as f64);
            data[pos * c + 2 * i] = T::from_f64(angle.sin());
            data[pos * c + 2 * i + 1] = T::from_f64(angle.cos());
        }
    }
    Tensor::new(vec![n, c], data)
}

/// Conditional positional encoding: the grid plus a pyramid of bias-free
/// depthwise convolutions (7x7, 5x5, 3x3).
pub fn ppeg<T: Scalar>(tape: &mut Tape<T>, b: &Binding<T>, grid: NodeId) -> Result<NodeId> {
    let d7 = tape.depthwise_conv2d(grid, b.id("ppeg.k7"))?;
    let d5 = tape.depthwise_conv2d(grid, b.id("ppeg.k5"))?;
    let d3 = tape.depthwise_conv2d(grid, b.id("ppeg.k3"))?;
    let s = tape.add(grid, d7)?;
    let s = tape.add(s, d5)?;
    tape.add(s, d3)
}

/// Gated attention-free pooling: softmax(Wᵀ tanh(V Xᵀ)) X.
/// Returns `(bag_vector [1,d], weights [1,n])`.
pub fn abmil_pool<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding<T>,
    x: NodeId,
) -> Result<(NodeId, NodeId)> {
    let xt = tape.transpose(x)?;
    let vx = tape.matmul(b.id("abmil.v"), xt)?;
    let act = tape.tanh(vx)?;
    let wt = tape.transpose(b.id("abmil.w"))?;
    let scores = tape.matmul(wt, act)?;
    let weights = tape.row_softmax(scores)?;
    let bag = tape.matmul(weights, x)?;
    Ok((bag, weights))
}

/// Scaled dot-product self-attention without positional encoding:
/// softmax(QKᵀ/sqrt(d_k)) V with Q = X Wq etc. Output is `[n, d_k]`.
pub fn self_attention<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding<T>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let q = tape.matmul(x, b.id(&format!("{prefix}.wq")))?;
    let k = tape.matmul(x, b.id(&format!("{prefix}.wk")))?;
    let v = tape.matmul(x, b.id(&format!("{prefix}.wv")))?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let dk = b.config().attn_dim as f64;
    let scaled = tape.scalar_mul(scores, 1.0 / dk.sqrt())?;
    let attn = tape.row_softmax(scaled)?;
    tape.matmul(attn, v)
}

/// Pre-norm residual transformer block:
/// X1 = X + Proj(SelfAttn(LN(X))); out = X1 + FFN(LN(X1)).
pub fn transformer_block<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding<T>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let ln1 = tape.layer_norm(x, b.id(&format!("{prefix}.ln1.g")), b.id(&format!("{prefix}.ln1.b")))?;
    let attn = self_attention(tape, b, prefix, ln1)?;
    let proj = tape.matmul(attn, b.id(&format!("{prefix}.proj")))?;
    let x1 = tape.add(x, proj)?;
    let ln2 = tape.layer_norm(x1, b.id(&format!("{prefix}.ln2.g")), b.id(&format!("{prefix}.ln2.b")))?;
    let h = tape.matmul(ln2, b.id(&format!("{prefix}.ff1.w")))?;
    let h = tape.add_bias(h, b.id(&format!("{prefix}.ff1.b")))?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, b.id(&format!("{prefix}.ff2.w")))?;
    let ff = tape.add_bias(h, b.id(&format!("{prefix}.ff2.b")))?;
    tape.add(x1, ff)
}

/// Residual convolution block:
/// relu(grid + Norm(Conv3(relu(Norm(Conv3(grid)))))).
pub fn residual_block<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding<T>,
    prefix: &str,
    grid: NodeId,
) -> Result<NodeId> {
    let c1 = tape.conv2d(grid, b.id(&format!("{prefix}.conv1")))?;
    let n1 = tape.channel_norm(c1, b.id(&format!("{prefix}.n1.g")), b.id(&format!("{prefix}.n1.b")))?;
    let r1 = tape.relu(n1)?;
    let c2 = tape.conv2d(r1, b.id(&format!("{prefix}.conv2")))?;
    let n2 = tape.channel_norm(c2, b.id(&format!("{prefix}.n2.g")), b.id(&format!("{prefix}.n2.b")))?;
    let s = tape.add(grid, n2)?;
    tape.relu(s)
}

/// Backbone over an already-padded slot sequence of m*m instances.
/// Returns the per-slot feature map `[m*m, embed]`.
pub fn backbone_padded<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding<T>,
    x_pad: NodeId,
    m: usize,
) -> Result<NodeId> {
    let cfg = b.config();
    let slots = m * m;
    if tape.value(x_pad).shape()[0] != slots {
        return Err(TensorError::ShapeMismatch {
            op: "backbone",
            detail: format!("expected {slots} padded slots, got {}", tape.value(x_pad).shape()[0]),
        });
    }
    let mut seq = mlp_embed(tape, b, x_pad)?;
    if cfg.pe == PeMode::Sinusoidal {
        let pe = tape.leaf(sinusoidal_pe::<T>(slots, cfg.embed_dim)?, false);
        seq = tape.add(seq, pe)?;
    }
    let mut grid = tape.reshape(seq, vec![m, m, cfg.embed_dim])?;
    if cfg.pe == PeMode::Ppeg {
        grid = ppeg(tape, b, grid)?;
    }
    match cfg.variant {
        Variant::Transformer => {
            let mut seq = tape.reshape(grid, vec![slots, cfg.embed_dim])?;
            seq = transformer_block(tape, b, "tf0", seq)?;
            transformer_block(tape, b, "tf1", seq)
        }
        Variant::Cnn => {
            let g = residual_block(tape, b, "res0", grid)?;
            let g = residual_block(tape, b, "res1", g)?;
            tape.reshape(g, vec![slots, cfg.embed_dim])
        }
        other => Err(TensorError::InvalidArg {
            op: "backbone",
            detail: format!("variant {} has no spatial backbone", other.name()),
        }),
    }
}

/// Full backbone on n raw instances: embed, square with duplicate padding,
/// then the variant's blocks. Returns `(features [m*m, embed], m, pad_count)`.
pub fn forward_backbone<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding<T>,
    x: NodeId,
) -> Result<(NodeId, usize, usize)> {
    let n = tape.value(x).shape()[0];
    let (m, idx) = pad_indices(n);
    let pad = idx.len();
    let x_pad = if pad == 0 {
        x
    } else {
        let extra = tape.gather(x, &idx)?;
        tape.concat(x, extra)?
    };
    let f = backbone_padded(tape, b, x_pad, m)?;
    Ok((f, m, pad))
}

/// Global average pooling over slots followed by the linear head.
pub fn classify<T: Scalar>(tape: &mut Tape<T>, b: &Binding<T>, f: NodeId) -> Result<NodeId> {
    let pooled = tape.mean_rows(f)?;
    let logits = tape.matmul(pooled, b.id("head.w"))?;
    tape.add_bias(logits, b.id("head.b"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

/// Non-parametric columnwise pooling of raw instance features.
pub fn baseline_pool<T: Scalar>(mode: PoolMode, x: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let d = x.data();
    let mut out = vec![T::zero(); c];
    match mode {
        PoolMode::Mean => {
            for i in 0..r {
                for j in 0..c {
                    out[j] = out[j] + d[i * c + j];
                }
            }
            let inv = T::one() / T::from_f64(r as f64);
            for v in &mut out {
                *v = *v * inv;
            }
        }
        PoolMode::Max => {
            out.copy_from_slice(&d[..c]);
            for i in 1..r {
                for j in 0..c {
                    out[j] = out[j].max(d[i * c + j]);
                }
            }
        }
    }
    Tensor::new(vec![1, c], out).expect("pool shape")
}

/// One bag through a model of any variant.
pub struct BagForward {
    /// Per-slot features of spatial variants, absent for pooled baselines.
    pub features: Option<NodeId>,
    pub logits: NodeId,
    pub grid_side: usize,
    pub pad_count: usize,
}

pub fn forward_bag<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Binding<T>,
    x: NodeId,
) -> Result<BagForward> {
    match b.config().variant {
        Variant::Transformer | Variant::Cnn => {
            let (f, m, pad) = forward_backbone(tape, b, x)?;
            let logits = classify(tape, b, f)?;
            Ok(BagForward { features: Some(f), logits, grid_side: m, pad_count: pad })
        }
        Variant::AbmilBaseline => {
            let e = mlp_embed(tape, b, x)?;
            let (bag, _w) = abmil_pool(tape, b, e)?;
            let logits = tape.matmul(bag, b.id("head.w"))?;
            let logits = tape.add_bias(logits, b.id("head.b"))?;
            Ok(BagForward { features: None, logits, grid_side: 0, pad_count: 0 })
        }
        Variant::MeanPool | Variant::MaxPool => {
            let e = mlp_embed(tape, b, x)?;
            let bag = if b.config().variant == Variant::MeanPool {
                tape.mean_rows(e)?
            } else {
                tape.col_max(e)?
            };
            let logits = tape.matmul(bag, b.id("head.w"))?;
            let logits = tape.add_bias(logits, b.id("head.b"))?;
            Ok(BagForward { features: None, logits, grid_side: 0, pad_count: 0 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Model, ModelConfig, PeMode, Variant};
    use crate::perm::Permutation;
    use crate::rng::{stream, tag};
    use rand::Rng;

    fn randn(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, &[tag::VERIFY, 99]);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let u1: f64 = rng.random_range(1e-9..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn mlp_embed_zero_params_give_zero_output() {
        let mut model: Model<f64> = Model::init(ModelConfig::new(Variant::MeanPool, 8)).unwrap();
        for name in ["embed.l1.w", "embed.l2.w"] {
            let t = model.params.get_mut(name).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let x = tape.leaf(randn(vec![3, 8], 1), false);
        let y = mlp_embed(&mut tape, &b, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn squaring_rules() {
        // n=4: perfect square
        let (m, idx) = pad_indices(4);
        assert_eq!((m, idx.len()), (2, 0));
        // n=5: m=3, four duplicates of instances 0..4
        let (m, idx) = pad_indices(5);
        assert_eq!(m, 3);
        assert_eq!(idx, vec![0, 1, 2, 3]);
        // n=1: 1x1 grid
        let (m, idx) = pad_indices(1);
        assert_eq!((m, idx.len()), (1, 0));

        let mut tape = Tape::new();
        let x = tape.leaf(randn(vec![5, 2], 2), false);
        let (grid, m, pad) = squaring(&mut tape, x).unwrap();
        assert_eq!((m, pad), (3, 4));
        assert_eq!(tape.value(grid).shape(), &[3, 3, 2]);
        // slot 5 duplicates instance 0
        assert_eq!(tape.value(grid).data()[5 * 2..6 * 2], tape.value(x).data()[0..2]);
    }

    #[test]
    fn sinusoidal_pe_values() {
        let pe: Tensor<f64> = sinusoidal_pe(4, 6).unwrap();
        // position 0: sin(0)=0 on even, cos(0)=1 on odd
        for i in 0..3 {
            assert_eq!(pe.data()[2 * i], 0.0);
            assert_eq!(pe.data()[2 * i + 1], 1.0);
        }
        assert!((pe.data()[6] - 1f64.sin()).abs() < 1e-12); // PE[1,0] = sin(1)
        assert!(sinusoidal_pe::<f64>(4, 5).is_err());
    }

    #[test]
    fn ppeg_is_linear_and_shape_preserving() {
        let mut cfg = ModelConfig::new(Variant::Cnn, 16);
        cfg.embed_dim = 8;
        cfg.identity_start = false;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let zero = tape.leaf(Tensor::zeros(vec![4, 4, 8]), false);
        let out = ppeg(&mut tape, &b, zero).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, 4, 8]);
        // bias-free: zero in, zero out
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn abmil_pool_single_instance_and_symmetry() {
        let model: Model<f64> = Model::init(ModelConfig::new(Variant::AbmilBaseline, 6)).unwrap();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        // single instance: weight 1, bag vector = the instance
        let x1 = tape.leaf(randn(vec![1, 128], 3), false);
        let (bag, w) = abmil_pool(&mut tape, &b, x1).unwrap();
        assert_eq!(tape.value(w).data(), &[1.0]);
        assert_eq!(tape.value(bag).data(), tape.value(x1).data());

        // identical instances: uniform weights
        let row = randn(vec![1, 128], 4);
        let stacked = Tensor::new(vec![4, 128], row.data().repeat(4)).unwrap();
        let xs = tape.leaf(stacked, false);
        let (_, w) = abmil_pool(&mut tape, &b, xs).unwrap();
        for &v in tape.value(w).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn abmil_pool_is_permutation_invariant() {
        let model: Model<f64> = Model::init(ModelConfig::new(Variant::AbmilBaseline, 6)).unwrap();
        let mut rng = stream(11, &[tag::VERIFY]);
        for _ in 0..10 {
            let x = randn(vec![7, 128], rng.random());
            let p = Permutation::sample(7, &mut rng).unwrap();
            let xs = p.apply(&x).unwrap();
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let a = tape.leaf(x, false);
            let s = tape.leaf(xs, false);
            let (bag_a, _) = abmil_pool(&mut tape, &b, a).unwrap();
            let (bag_s, _) = abmil_pool(&mut tape, &b, s).unwrap();
            let diff = tape.value(bag_a).max_abs_diff(tape.value(bag_s));
            assert!(diff < 1e-10, "abmil not invariant: {diff}");
        }
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let mut cfg = ModelConfig::new(Variant::Transformer, 6);
        cfg.embed_dim = 16;
        cfg.attn_dim = 8;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let mut rng = stream(12, &[tag::VERIFY]);
        for _ in 0..10 {
            let x = randn(vec![6, 16], rng.random());
            let p = Permutation::sample(6, &mut rng).unwrap();
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let a = tape.leaf(x.clone(), false);
            let s = tape.leaf(p.apply(&x).unwrap(), false);
            let ya = self_attention(&mut tape, &b, "tf0", a).unwrap();
            let ys = self_attention(&mut tape, &b, "tf0", s).unwrap();
            let expected = p.apply(tape.value(ya)).unwrap();
            assert!(expected.max_abs_diff(tape.value(ys)) < 1e-10);
        }
    }

    #[test]
    fn transformer_block_is_equivariant_and_shape_preserving() {
        let mut cfg = ModelConfig::new(Variant::Transformer, 6);
        cfg.embed_dim = 16;
        cfg.attn_dim = 8;
        cfg.identity_start = false;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let mut rng = stream(13, &[tag::VERIFY]);
        for _ in 0..5 {
            let x = randn(vec![5, 16], rng.random());
            let p = Permutation::sample(5, &mut rng).unwrap();
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let a = tape.leaf(x.clone(), false);
            let s = tape.leaf(p.apply(&x).unwrap(), false);
            let ya = transformer_block(&mut tape, &b, "tf0", a).unwrap();
            let ys = transformer_block(&mut tape, &b, "tf0", s).unwrap();
            assert_eq!(tape.value(ya).shape(), &[5, 16]);
            let expected = p.apply(tape.value(ya)).unwrap();
            assert!(expected.max_abs_diff(tape.value(ys)) < 1e-9);
        }
    }

    #[test]
    fn residual_block_zero_all_is_zero() {
        let mut cfg = ModelConfig::new(Variant::Cnn, 16);
        cfg.embed_dim = 4;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let zero = tape.leaf(Tensor::zeros(vec![3, 3, 4]), false);
        let out = residual_block(&mut tape, &b, "res0", zero).unwrap();
        assert_eq!(tape.value(out).shape(), &[3, 3, 4]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backbone_row_count_follows_squaring() {
        for variant in [Variant::Transformer, Variant::Cnn] {
            let mut cfg = ModelConfig::new(variant, 8);
            cfg.embed_dim = 16;
            cfg.attn_dim = 8;
            let model: Model<f64> = Model::init(cfg).unwrap();
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let x = tape.leaf(randn(vec![5, 8], 21), false);
            let (f, m, pad) = forward_backbone(&mut tape, &b, x).unwrap();
            assert_eq!((m, pad), (3, 4));
            assert_eq!(tape.value(f).shape(), &[9, 16]);
        }
    }

    #[test]
    fn backbone_without_pe_is_permutation_invariant_after_pooling() {
        let mut cfg = ModelConfig::new(Variant::Transformer, 8);
        cfg.embed_dim = 16;
        cfg.attn_dim = 8;
        cfg.pe = PeMode::None;
        cfg.identity_start = false;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let mut rng = stream(14, &[tag::VERIFY]);
        for _ in 0..5 {
            let x = randn(vec![9, 8], rng.random()); // perfect square: no padding
            let p = Permutation::sample(9, &mut rng).unwrap();
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let a = tape.leaf(x.clone(), false);
            let s = tape.leaf(p.apply(&x).unwrap(), false);
            let (fa, _, _) = forward_backbone(&mut tape, &b, a).unwrap();
            let (fs, _, _) = forward_backbone(&mut tape, &b, s).unwrap();
            let ma = tape.mean_rows(fa).unwrap();
            let ms = tape.mean_rows(fs).unwrap();
            let diff = tape.value(ma).max_abs_diff(tape.value(ms));
            assert!(diff < 1e-8, "pooled backbone not invariant: {diff}");
        }
    }

    #[test]
    fn backbone_is_deterministic() {
        let cfg = ModelConfig::new(Variant::Cnn, 8);
        let run = || {
            let mut cfg = cfg.clone();
            cfg.embed_dim = 16;
            let model: Model<f64> = Model::init(cfg).unwrap();
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let x = tape.leaf(randn(vec![6, 8], 77), false);
            let (f, _, _) = forward_backbone(&mut tape, &b, x).unwrap();
            tape.value(f).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn classify_zero_features_yield_bias() {
        let mut model: Model<f64> = Model::init(ModelConfig::new(Variant::Transformer, 8)).unwrap();
        model.params.get_mut("head.b").unwrap().data_mut()[0] = 0.75;
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let f = tape.leaf(Tensor::zeros(vec![4, 128]), false);
        let logits = classify(&mut tape, &b, f).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.75]);
    }

    #[test]
    fn classify_two_slot_hand_example() {
        // head weight picks feature 0; mean of the two slots plus bias
        let mut cfg = ModelConfig::new(Variant::Transformer, 8);
        cfg.embed_dim = 2;
        let mut model: Model<f64> = Model::init(cfg).unwrap();
        {
            let w = model.params.get_mut("head.w").unwrap();
            w.data_mut().copy_from_slice(&[2.0, 0.0]);
        }
        model.params.get_mut("head.b").unwrap().data_mut()[0] = 0.5;
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let f = tape.leaf(Tensor::from_rows(&[vec![1.0, 9.0], vec![3.0, -9.0]]).unwrap(), false);
        let logits = classify(&mut tape, &b, f).unwrap();
        // mean feature0 = 2 -> 2*2 + 0.5
        assert!((tape.value(logits).data()[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn baseline_pool_rules() {
        let x = Tensor::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let mean = baseline_pool(PoolMode::Mean, &x);
        assert_eq!(mean.data(), &[1.0, 1.0]);
        let max = baseline_pool(PoolMode::Max, &x);
        assert_eq!(max.data(), &[2.0, 2.0]);
        let single = Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap();
        assert_eq!(baseline_pool(PoolMode::Mean, &single).data(), single.data());
        // exact invariance
        let p = Permutation::from_indices(vec![1, 0]).unwrap();
        let xs = p.apply(&x).unwrap();
        assert_eq!(baseline_pool(PoolMode::Mean, &xs).data(), mean.data());
        assert_eq!(baseline_pool(PoolMode::Max, &xs).data(), max.data());
    }

    #[test]
    fn mlp_embed_gradients_match_finite_differences() {
        // finite differences through both stages on a tiny config
        let mut cfg = ModelConfig::new(Variant::MeanPool, 4);
        cfg.embed_dim = 3;
        cfg.lambda = 0.0;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let x_val = randn(vec![2, 4], 31);
        let eval = |m: &Model<f64>| -> f64 {
            let mut tape = Tape::new();
            let b = m.bind(&mut tape, false);
            let x = tape.leaf(x_val.clone(), false);
            let y = mlp_embed(&mut tape, &b, x).unwrap();
            let s = tape.sum(y).unwrap();
            tape.value(s).data()[0]
        };
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, true);
        let x = tape.leaf(x_val.clone(), false);
        let y = mlp_embed(&mut tape, &b, x).unwrap();
        let root = tape.sum(y).unwrap();
        tape.backward(root).unwrap();

        let eps = 1e-6;
        for name in ["embed.l1.w", "embed.l1.b", "embed.l2.w", "embed.l2.b"] {
            let grad = tape.grad(b.id(name)).unwrap().to_vec();
            for e in 0..grad.len() {
                let mut plus = model.clone();
                plus.params.get_mut(name).unwrap().data_mut()[e] += eps;
                let mut minus = model.clone();
                minus.params.get_mut(name).unwrap().data_mut()[e] -= eps;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                assert!(
                    (grad[e] - fd).abs() / fd.abs().max(1.0) < 1e-5,
                    "{name}[{e}]: analytic {} vs fd {fd}",
                    grad[e]
                );
            }
        }
    }
}
