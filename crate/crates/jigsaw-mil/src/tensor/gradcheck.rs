//! Finite-difference oracle for every tape primitive.
//!
//! `grad_check` compares the analytic reverse-mode gradient of a random
//! projection of a primitive's output against central differences. It is the
//! independent check the verification CLI and the acceptance suite run; it
//! never shares code with the adjoint rules it checks.

use super::{NodeId, Result, Tape, Tensor};

/// Differentiable primitives of the engine, enumerable for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Matmul,
    Transpose,
    Add,
    Sub,
    Mul,
    ScalarMul,
    AddBias,
    Tanh,
    Relu,
    Sigmoid,
    Log,
    Exp,
    Softplus,
    RowSoftmax,
    LayerNorm,
    ChannelNorm,
    Conv2d,
    DepthwiseConv2d,
    MeanRows,
    ColMax,
    Reshape,
    Concat,
    Gather,
    Sum,
    Mean,
    SqNorm,
}

pub const ALL_PRIMITIVES: &[Primitive] = &[
    Primitive::Matmul,
    Primitive::Transpose,
    Primitive::Add,
    Primitive::Sub,
    Primitive::Mul,
    Primitive::ScalarMul,
    Primitive::AddBias,
    Primitive::Tanh,
    Primitive::Relu,
    Primitive::Sigmoid,
    Primitive::Log,
    Primitive::Exp,
    Primitive::Softplus,
    Primitive::RowSoftmax,
    Primitive::LayerNorm,
    Primitive::ChannelNorm,
    Primitive::Conv2d,
    Primitive::DepthwiseConv2d,
    Primitive::MeanRows,
    Primitive::ColMax,
    Primitive::Reshape,
    Primitive::Concat,
    Primitive::Gather,
    Primitive::Sum,
    Primitive::Mean,
    Primitive::SqNorm,
];

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Matmul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::ScalarMul => "scalar_mul",
            Primitive::AddBias => "add_bias",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Softplus => "softplus",
            Primitive::RowSoftmax => "row_softmax",
            Primitive::LayerNorm => "layer_norm",
            Primitive::ChannelNorm => "channel_norm",
            Primitive::Conv2d => "conv2d",
            Primitive::DepthwiseConv2d => "depthwise_conv2d",
            Primitive::MeanRows => "mean_rows",
            Primitive::ColMax => "col_max",
            Primitive::Reshape => "reshape",
            Primitive::Concat => "concat",
            Primitive::Gather => "gather",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SqNorm => "sq_norm",
        }
    }

    fn apply(&self, tape: &mut Tape<f64>, ids: &[NodeId]) -> Result<NodeId> {
        match self {
            Primitive::Matmul => tape.matmul(ids[0], ids[1]),
            Primitive::Transpose => tape.transpose(ids[0]),
            Primitive::Add => tape.add(ids[0], ids[1]),
            Primitive::Sub => tape.sub(ids[0], ids[1]),
            Primitive::Mul => tape.mul(ids[0], ids[1]),
            Primitive::ScalarMul => tape.scalar_mul(ids[0], 1.7),
            Primitive::AddBias => tape.add_bias(ids[0], ids[1]),
            Primitive::Tanh => tape.tanh(ids[0]),
            Primitive::Relu => tape.relu(ids[0]),
            Primitive::Sigmoid => tape.sigmoid(ids[0]),
            Primitive::Log => tape.log(ids[0]),
            Primitive::Exp => tape.exp(ids[0]),
            Primitive::Softplus => tape.softplus(ids[0]),
            Primitive::RowSoftmax => tape.row_softmax(ids[0]),
            Primitive::LayerNorm => tape.layer_norm(ids[0], ids[1], ids[2]),
            Primitive::ChannelNorm => tape.channel_norm(ids[0], ids[1], ids[2]),
            Primitive::Conv2d => tape.conv2d(ids[0], ids[1]),
            Primitive::DepthwiseConv2d => tape.depthwise_conv2d(ids[0], ids[1]),
            Primitive::MeanRows => tape.mean_rows(ids[0]),
            Primitive::ColMax => tape.col_max(ids[0]),
            Primitive::Reshape => {
                let numel = tape.value(ids[0]).numel();
                tape.reshape(ids[0], vec![numel])
            }
            Primitive::Concat => tape.concat(ids[0], ids[1]),
            Primitive::Gather => {
                let r = tape.value(ids[0]).shape()[0];
                let idx = gather_pattern(r);
                tape.gather(ids[0], &idx)
            }
            Primitive::Sum => tape.sum(ids[0]),
            Primitive::Mean => tape.mean(ids[0]),
            Primitive::SqNorm => tape.sq_norm(ids[0]),
        }
    }
}

/// Fixed index pattern with duplicates, derived from the row count.
fn gather_pattern(r: usize) -> Vec<usize> {
    let mut idx = vec![0, r - 1, 0];
    idx.extend((0..r).map(|i| (i * 3 + 1) % r));
    idx
}

/// Deterministic projection weights so the checked objective is a scalar
/// sensitive to every output element.
fn projection(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
            0.25 + (h % 1024) as f64 / 1024.0
        })
        .collect()
}

/// Scalar objective: a fixed projection of the primitive's output.
fn objective(p: Primitive, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = p.apply(&mut tape, &ids)?;
    let proj =
        tape.leaf(Tensor::new(tape.value(out).shape().to_vec(), projection(tape.value(out).numel()))?, false);
    let weighted = tape.mul(out, proj)?;
    let root = tape.sum(weighted)?;
    Ok(tape.value(root).data()[0])
}

/// Max over all input elements of
/// `|analytic - central_difference| / max(1, |central_difference|)`.
pub fn grad_check(p: Primitive, inputs: &[Tensor<f64>], eps: f64) -> Result<f64> {
    // analytic pass
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = p.apply(&mut tape, &ids)?;
    let proj =
        tape.leaf(Tensor::new(tape.value(out).shape().to_vec(), projection(tape.value(out).numel()))?, false);
    let weighted = tape.mul(out, proj)?;
    let root = tape.sum(weighted)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= eps;
            let fd = (objective(p, &plus)? - objective(p, &minus)?) / (2.0 * eps);
            let err = (analytic[i][e] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Random small inputs for a primitive, kept away from non-differentiable
/// points (ReLU kinks, max ties, log domain edge).
pub fn random_case<R: rand::Rng>(p: Primitive, rng: &mut R) -> Vec<Tensor<f64>> {
    fn dims<R: rand::Rng, const N: usize>(rng: &mut R, ranges: [(usize, usize); N]) -> [usize; N] {
        ranges.map(|(lo, hi)| rng.random_range(lo..=hi))
    }
    let norm = |rng: &mut R| -> f64 {
        // Box–Muller from two uniforms; plain and dependency-free here.
        let u1: f64 = rng.random_range(1e-9..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let filled = |shape: Vec<usize>, rng: &mut R, f: &dyn Fn(&mut R, usize) -> f64| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| f(rng, i)).collect()).unwrap()
    };
    let gauss: &dyn Fn(&mut R, usize) -> f64 = &|rng, _| norm(rng);
    // away from the ReLU kink
    let kink_safe: &dyn Fn(&mut R, usize) -> f64 = &|rng, _| {
        let mut x = norm(rng);
        while x.abs() < 1e-2 {
            x = norm(rng);
        }
        x
    };
    // strictly positive, away from zero
    let positive: &dyn Fn(&mut R, usize) -> f64 = &|rng, _| norm(rng).abs() + 0.5;
    // pairwise-distinct columns values so col_max has no ties
    let distinct: &dyn Fn(&mut R, usize) -> f64 = &|rng, i| norm(rng) + i as f64 * 1e-3;

    match p {
        Primitive::Matmul => {
            let [m, k, n] = dims(rng, [(1, 4), (1, 4), (1, 4)]);
            vec![filled(vec![m, k], rng, gauss), filled(vec![k, n], rng, gauss)]
        }
        Primitive::Transpose
        | Primitive::ScalarMul
        | Primitive::Tanh
        | Primitive::Sigmoid
        | Primitive::Exp
        | Primitive::Softplus
        | Primitive::RowSoftmax
        | Primitive::MeanRows
        | Primitive::Reshape
        | Primitive::Sum
        | Primitive::Mean
        | Primitive::SqNorm => {
            let [r, c] = dims(rng, [(1, 5), (1, 5)]);
            vec![filled(vec![r, c], rng, gauss)]
        }
        Primitive::Relu => {
            let [r, c] = dims(rng, [(1, 5), (1, 5)]);
            vec![filled(vec![r, c], rng, kink_safe)]
        }
        Primitive::Log => {
            let [r, c] = dims(rng, [(1, 5), (1, 5)]);
            vec![filled(vec![r, c], rng, positive)]
        }
        Primitive::ColMax => {
            let [r, c] = dims(rng, [(2, 5), (1, 5)]);
            vec![filled(vec![r, c], rng, distinct)]
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let [r, c] = dims(rng, [(1, 5), (1, 5)]);
            vec![filled(vec![r, c], rng, gauss), filled(vec![r, c], rng, gauss)]
        }
        Primitive::AddBias => {
            let [r, c] = dims(rng, [(1, 5), (1, 5)]);
            vec![filled(vec![r, c], rng, gauss), filled(vec![c], rng, gauss)]
        }
        Primitive::LayerNorm => {
            let [r, c] = dims(rng, [(1, 4), (2, 6)]);
            vec![
                filled(vec![r, c], rng, gauss),
                filled(vec![c], rng, positive),
                filled(vec![c], rng, gauss),
            ]
        }
        Primitive::ChannelNorm => {
            let [h, w, c] = dims(rng, [(2, 3), (2, 3), (1, 3)]);
            vec![
                filled(vec![h, w, c], rng, gauss),
                filled(vec![c], rng, positive),
                filled(vec![c], rng, gauss),
            ]
        }
        Primitive::Conv2d => {
            let [h, w, ci, co] = dims(rng, [(2, 5), (2, 5), (1, 2), (1, 2)]);
            let k = if rng.random_bool(0.5) { 1 } else { 3 };
            vec![filled(vec![h, w, ci], rng, gauss), filled(vec![k, k, ci, co], rng, gauss)]
        }
        Primitive::DepthwiseConv2d => {
            let [h, w, c] = dims(rng, [(2, 5), (2, 5), (1, 3)]);
            let k = if rng.random_bool(0.5) { 3 } else { 5 };
            vec![filled(vec![h, w, c], rng, gauss), filled(vec![k, k, c], rng, gauss)]
        }
        Primitive::Concat => {
            let [ra, rb, c] = dims(rng, [(1, 3), (1, 3), (1, 4)]);
            vec![filled(vec![ra, c], rng, gauss), filled(vec![rb, c], rng, gauss)]
        }
        Primitive::Gather => {
            let [r, c] = dims(rng, [(2, 5), (1, 4)]);
            vec![filled(vec![r, c], rng, gauss)]
        }
    }
}
