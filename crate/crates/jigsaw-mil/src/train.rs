//! Siamese training with the shuffling-equivalence regularizer.
//!
//! Every step pads a bag onto its grid, samples one permutation of the
//! padded slots, and runs two weight-sharing branches: one on the ordered
//! slots, one on the shuffled slots. The regularizer penalizes the mean
//! squared error between the shuffled branch's features and the shuffled
//! ordered-branch features, so the backbone is pushed toward maps that
//! commute with shuffling. The task loss reads the ordered branch only
//! (optionally both).
//!
//! The dual branches are independent graphs over shared read-only
//! parameters, coupled only through a small loss tape. `Stacked` mode
//! evaluates and differentiates them concurrently; `Sequential` runs them
//! one after the other. Both produce identical losses and gradients because
//! the per-branch arithmetic is unchanged and gradient reduction order is
//! fixed.

use crate::data::{Bag, BagLabel};
use crate::metrics::{self, BinaryMetrics, MetricsError};
use crate::nets::{
    backbone_padded, classify, forward_bag, pad_indices, Binding, Head, Model, ModelConfig,
    NetError, ParamSet,
};
use crate::perm::Permutation;
use crate::rng::{stream, tag, Pcg};
use crate::tensor::{NodeId, Scalar, Tape, Tensor, TensorError};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty bag rejected")]
    EmptyBag,
    #[error("empty dataset rejected")]
    EmptyDataset,
    #[error("lambda must be >= 0, got {0}")]
    NegativeLambda(f64),
    #[error("survival bag lacks an assigned time bin")]
    MissingBin,
    #[error("bag label {0} does not fit head {1}")]
    LabelMismatch(String, String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Perm(#[from] crate::perm::PermError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// Both branches evaluated concurrently (the batched execution).
    Stacked,
    /// Two forwards in one thread.
    Sequential,
}

impl StepMode {
    pub fn name(&self) -> &'static str {
        match self {
            StepMode::Stacked => "stacked",
            StepMode::Sequential => "sequential",
        }
    }
}

/// Per-step losses and branch logits.
#[derive(Debug, Clone)]
pub struct SiameseStepOutput {
    pub task_loss: f64,
    pub equivalence_loss: f64,
    pub total_loss: f64,
    pub logits_unshuffled: Vec<f64>,
    pub logits_shuffled: Option<Vec<f64>>,
}

/// Combined objective: task loss plus lambda times the equivalence loss.
pub fn final_loss(task_loss: f64, equivalence_loss: f64, lambda: f64) -> Result<f64, TrainError> {
    if lambda < 0.0 {
        return Err(TrainError::NegativeLambda(lambda));
    }
    Ok(task_loss + lambda * equivalence_loss)
}

/// Reference equivalence loss on plain tensors:
/// `(1 / (2 rows)) * ||f_shuffled - perm(f_unshuffled)||²`.
pub fn equivalence_mse(
    f_unshuffled: &Tensor<f64>,
    f_shuffled: &Tensor<f64>,
    perm: &Permutation,
) -> Result<f64, TrainError> {
    if f_unshuffled.shape() != f_shuffled.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "equivalence_loss",
            detail: format!("{:?} vs {:?}", f_unshuffled.shape(), f_shuffled.shape()),
        }
        .into());
    }
    let reference = perm.apply(f_unshuffled)?;
    let rows = f_unshuffled.shape()[0];
    let sq: f64 = f_shuffled
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sq / (2.0 * rows as f64))
}

// ── optimizer ────────────────────────────────────────────────────────

/// Decoupled-weight-decay adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: &crate::nets::OptimizerConfig, params: &ParamSet<T>) -> Self {
        let m = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        let v = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update; `grads` must align with the parameter registration order.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Vec<T>]) -> Result<(), TrainError> {
        if grads.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adamw",
                detail: format!("{} gradient slots for {} parameters", grads.len(), self.m.len()),
            }
            .into());
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let lr = T::from_f64(self.lr);
        let decay = T::from_f64(self.lr * self.weight_decay);
        let eps = T::from_f64(self.eps);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);

        for (idx, (_, tensor)) in params.iter_mut().enumerate() {
            let g = &grads[idx];
            if g.len() != tensor.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw",
                    detail: format!(
                        "gradient length {} for parameter of {} values",
                        g.len(),
                        tensor.numel()
                    ),
                }
                .into());
            }
            let m = self.m[idx].as_mut_slice();
            let v = self.v[idx].as_mut_slice();
            let p = tensor.data_mut();
            for i in 0..p.len() {
                let gi = g[i];
                let mi = b1 * m[i] + one_m_b1 * gi;
                let vi = b2 * v[i] + one_m_b2 * gi * gi;
                m[i] = mi;
                v[i] = vi;
                p[i] = p[i] - decay * p[i] - lr * (mi * inv_bc1) / ((vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

// ── targets and in-graph losses ──────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskTarget {
    Binary(f64),
    Class(usize),
    Survival { bin: usize, event: bool },
}

/// Derive the training target of a bag under a head; survival bags must
/// already carry their assigned bin.
pub fn target_for(bag: &Bag, head: Head) -> Result<TaskTarget, TrainError> {
    match (&bag.label, head) {
        (BagLabel::Class(y @ (0 | 1)), Head::Binary) => Ok(TaskTarget::Binary(*y as f64)),
        (BagLabel::Class(y), Head::Multiclass(c)) if (*y as usize) < c => {
            Ok(TaskTarget::Class(*y as usize))
        }
        (BagLabel::Survival(rec), Head::Survival(j)) => {
            let bin = rec.bin.ok_or(TrainError::MissingBin)?;
            if bin >= j {
                return Err(MetricsError::BinOutOfRange { bin, bins: j }.into());
            }
            Ok(TaskTarget::Survival { bin, event: rec.event })
        }
        (label, head) => Err(TrainError::LabelMismatch(format!("{label:?}"), format!("{head:?}"))),
    }
}

/// Build the task loss on a tape from `[1, width]` logits; the result is a
/// scalar of shape `[1]`.
fn task_loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    logits: NodeId,
    target: TaskTarget,
) -> Result<NodeId, TrainError> {
    match target {
        TaskTarget::Binary(y) => {
            // softplus(z) - y z, the stable cross-entropy form
            let sp = tape.softplus(logits)?;
            let lin = tape.scalar_mul(logits, -y)?;
            let loss = tape.add(sp, lin)?;
            Ok(tape.reshape(loss, vec![1])?)
        }
        TaskTarget::Class(y) => {
            let probs = tape.row_softmax(logits)?;
            let cols = tape.transpose(probs)?;
            let py = tape.gather(cols, &[y])?;
            let log_py = tape.log(py)?;
            let loss = tape.scalar_mul(log_py, -1.0)?;
            Ok(tape.reshape(loss, vec![1])?)
        }
        TaskTarget::Survival { bin, event } => {
            // -log(1-h_k) = softplus(z_k) and -log h_k = softplus(-z_k)
            let cols = tape.transpose(logits)?;
            let mut total: Option<NodeId> = None;
            let survive_until = if event { bin } else { bin + 1 };
            if survive_until > 0 {
                let idx: Vec<usize> = (0..survive_until).collect();
                let z = tape.gather(cols, &idx)?;
                let sp = tape.softplus(z)?;
                total = Some(tape.sum(sp)?);
            }
            if event {
                let z_bin = tape.gather(cols, &[bin])?;
                let neg = tape.scalar_mul(z_bin, -1.0)?;
                let sp = tape.softplus(neg)?;
                let term = tape.sum(sp)?;
                total = Some(match total {
                    Some(t) => tape.add(t, term)?,
                    None => term,
                });
            }
            Ok(total.expect("at least one likelihood term"))
        }
    }
}

// ── branch execution ─────────────────────────────────────────────────

struct BranchRun<'m, T: Scalar> {
    tape: Tape<T>,
    binding: Binding<'m, T>,
    features: Option<NodeId>,
    logits: NodeId,
}

/// Forward one branch over pre-padded slots (spatial variants).
fn run_spatial_branch<'m, T: Scalar>(
    model: &'m Model<T>,
    x_pad: &Tensor<T>,
    m: usize,
) -> Result<BranchRun<'m, T>, TrainError> {
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, true);
    let x = tape.leaf(x_pad.clone(), false);
    let f = backbone_padded(&mut tape, &binding, x, m)?;
    let logits = classify(&mut tape, &binding, f)?;
    Ok(BranchRun { tape, binding, features: Some(f), logits })
}

/// Forward a pooled-baseline model on raw instances.
fn run_pooled_branch<'m, T: Scalar>(
    model: &'m Model<T>,
    x: &Tensor<T>,
) -> Result<BranchRun<'m, T>, TrainError> {
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, true);
    let x = tape.leaf(x.clone(), false);
    let fwd = forward_bag(&mut tape, &binding, x)?;
    Ok(BranchRun { tape, binding, features: fwd.features, logits: fwd.logits })
}

fn bag_features<T: Scalar>(bag: &Bag) -> Tensor<T> {
    bag.features.map(|v| T::from_f64(v as f64))
}

/// Duplicate-pad raw instances to the full grid.
fn pad_instances<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, usize) {
    let n = x.shape()[0];
    let d = x.shape()[1];
    let (m, idx) = pad_indices(n);
    let mut data = x.data().to_vec();
    for &i in &idx {
        data.extend_from_slice(x.row(i));
    }
    (Tensor::new(vec![m * m, d], data).expect("pad shape"), m)
}

fn logits_f64<T: Scalar>(tape: &Tape<T>, id: NodeId) -> Vec<f64> {
    tape.value(id).data().iter().map(|&v| Scalar::to_f64(v)).collect()
}

/// Ordered-branch forward for any variant.
fn run_ordered_branch<'m, T: Scalar>(
    model: &'m Model<T>,
    x_pad: &Tensor<T>,
    m: usize,
) -> Result<BranchRun<'m, T>, TrainError> {
    if model.config.variant.is_spatial() {
        run_spatial_branch(model, x_pad, m)
    } else {
        run_pooled_branch(model, x_pad)
    }
}

/// Collect per-parameter gradients of a branch in registration order.
fn collect_grads<T: Scalar>(run: &mut BranchRun<T>) -> Vec<Option<Vec<T>>> {
    let ids = run.binding.ids().to_vec();
    ids.into_iter().map(|id| run.tape.take_grad(id)).collect()
}

/// One Siamese training step on one bag: forward both branches, combine the
/// task loss with the equivalence loss, backpropagate once, apply one
/// optimizer update. With `lambda == 0` the shuffled branch is skipped and
/// the step is plain single-branch training.
pub fn siamese_step<T: Scalar>(
    model: &mut Model<T>,
    bag: &Bag,
    lambda: f64,
    opt: &mut AdamW<T>,
    mode: StepMode,
    rng: &mut Pcg,
) -> Result<SiameseStepOutput, TrainError> {
    if bag.n() == 0 {
        return Err(TrainError::EmptyBag);
    }
    if lambda < 0.0 {
        return Err(TrainError::NegativeLambda(lambda));
    }
    let target = target_for(bag, model.config.head)?;
    let dual = lambda > 0.0 && model.config.variant.is_spatial();
    let classify_shuffled = model.config.classify_shuffled && dual;

    let x: Tensor<T> = bag_features(bag);
    let (x_pad, m) =
        if model.config.variant.is_spatial() { pad_instances(&x) } else { (x.clone(), 0) };
    let slots = x_pad.shape()[0];
    // The permutation is consumed from the step stream even when the dual
    // branch is skipped, so lambda does not perturb unrelated streams.
    let perm = Permutation::sample(slots, rng)?;

    let model_ref: &Model<T> = model;

    let (mut branch_u, mut branch_s, task, eqv, logits_u, logits_s) = if dual {
        let x_shuffled = perm.apply(&x_pad)?;
        let (bu, bs) = match mode {
            StepMode::Sequential => (
                run_ordered_branch(model_ref, &x_pad, m),
                run_spatial_branch(model_ref, &x_shuffled, m),
            ),
            StepMode::Stacked => std::thread::scope(|scope| {
                let handle = scope.spawn(|| run_spatial_branch(model_ref, &x_shuffled, m));
                let bu = run_ordered_branch(model_ref, &x_pad, m);
                (bu, handle.join().expect("shuffled branch panicked"))
            }),
        };
        let (mut bu, mut bs) = (bu?, bs?);
        let f_u = bu.features.expect("spatial branch has features");
        let f_s = bs.features.expect("spatial branch has features");

        // loss tape over branch outputs
        let mut head: Tape<T> = Tape::new();
        let fu_leaf = head.leaf(bu.tape.value(f_u).clone(), true);
        let fs_leaf = head.leaf(bs.tape.value(f_s).clone(), true);
        let lu_leaf = head.leaf(bu.tape.value(bu.logits).clone(), true);
        let ls_leaf = head.leaf(bs.tape.value(bs.logits).clone(), classify_shuffled);

        let mut task_node = task_loss_graph(&mut head, lu_leaf, target)?;
        if classify_shuffled {
            let task_s = task_loss_graph(&mut head, ls_leaf, target)?;
            let sum = head.add(task_node, task_s)?;
            task_node = head.scalar_mul(sum, 0.5)?;
        }
        let reference = head.gather(fu_leaf, perm.indices())?;
        let diff = head.sub(fs_leaf, reference)?;
        let sq = head.sq_norm(diff)?;
        let eqv_node = head.scalar_mul(sq, 1.0 / (2.0 * slots as f64))?;
        let weighted = head.scalar_mul(eqv_node, lambda)?;
        let total_node = head.add(task_node, weighted)?;
        head.backward(total_node)?;

        let task = head.value(task_node).data()[0].to_f64();
        let eqv = head.value(eqv_node).data()[0].to_f64();
        let d_fu = head.take_grad(fu_leaf).expect("feature grad");
        let d_fs = head.take_grad(fs_leaf).expect("feature grad");
        let d_lu = head.take_grad(lu_leaf).expect("logit grad");
        let d_ls = head.take_grad(ls_leaf);

        let seeds_u = vec![(f_u, d_fu), (bu.logits, d_lu)];
        let mut seeds_s = vec![(f_s, d_fs)];
        if let Some(d) = d_ls {
            seeds_s.push((bs.logits, d));
        }
        match mode {
            StepMode::Sequential => {
                bu.tape.backward_seeded(&seeds_u)?;
                bs.tape.backward_seeded(&seeds_s)?;
            }
            StepMode::Stacked => {
                let (ru, rs) = std::thread::scope(|scope| {
                    let handle =
                        scope.spawn(move || bs.tape.backward_seeded(&seeds_s).map(|()| bs));
                    let ru = bu.tape.backward_seeded(&seeds_u).map(|()| bu);
                    (ru, handle.join().expect("shuffled backward panicked"))
                });
                bu = ru?;
                bs = rs?;
            }
        }
        let logits_u = logits_f64(&bu.tape, bu.logits);
        let logits_s = logits_f64(&bs.tape, bs.logits);
        (Some(bu), Some(bs), task, eqv, logits_u, Some(logits_s))
    } else {
        let mut bu = run_ordered_branch(model_ref, &x_pad, m)?;
        let mut head: Tape<T> = Tape::new();
        let lu_leaf = head.leaf(bu.tape.value(bu.logits).clone(), true);
        let task_node = task_loss_graph(&mut head, lu_leaf, target)?;
        head.backward(task_node)?;
        let task = head.value(task_node).data()[0].to_f64();
        let d_lu = head.take_grad(lu_leaf).expect("logit grad");
        bu.tape.backward_seeded(&[(bu.logits, d_lu)])?;
        let logits_u = logits_f64(&bu.tape, bu.logits);
        (Some(bu), None, task, 0.0, logits_u, None)
    };

    // gradient reduction in fixed order: ordered branch, then shuffled
    let sizes: Vec<usize> = model.params.iter().map(|(_, t)| t.numel()).collect();
    let grads: Vec<Vec<T>> = {
        let gu = collect_grads(branch_u.as_mut().expect("ordered branch"));
        let gs = branch_s.as_mut().map(collect_grads);
        gu.into_iter()
            .enumerate()
            .map(|(i, u)| {
                let mut acc = u.unwrap_or_else(|| vec![T::zero(); sizes[i]]);
                if let Some(gs) = &gs {
                    if let Some(s) = &gs[i] {
                        for (a, &b) in acc.iter_mut().zip(s) {
                            *a = *a + b;
                        }
                    }
                }
                acc
            })
            .collect()
    };
    drop(branch_u);
    drop(branch_s);
    opt.step(&mut model.params, &grads)?;

    let total = final_loss(task, eqv, lambda)?;
    Ok(SiameseStepOutput {
        task_loss: task,
        equivalence_loss: eqv,
        total_loss: total,
        logits_unshuffled: logits_u,
        logits_shuffled: logits_s,
    })
}

// ── evaluation ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMetrics {
    Classification(BinaryMetrics),
    Survival { c_index: f64 },
}

impl EvalMetrics {
    /// The headline scalar: accuracy or concordance.
    pub fn primary(&self) -> f64 {
        match self {
            EvalMetrics::Classification(m) => m.accuracy,
            EvalMetrics::Survival { c_index } => *c_index,
        }
    }
}

/// Forward-only logits of one bag.
pub fn predict_logits<T: Scalar>(model: &Model<T>, bag: &Bag) -> Result<Vec<f64>, TrainError> {
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, false);
    let x = tape.leaf(bag_features(bag), false);
    let fwd = forward_bag(&mut tape, &binding, x)?;
    Ok(logits_f64(&tape, fwd.logits))
}

/// Deterministic evaluation over a split.
pub fn evaluate<T: Scalar>(model: &Model<T>, bags: &[Bag]) -> Result<EvalMetrics, TrainError> {
    if bags.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    match model.config.head {
        Head::Binary => {
            let mut scores = Vec::with_capacity(bags.len());
            let mut labels = Vec::with_capacity(bags.len());
            for bag in bags {
                let logits = predict_logits(model, bag)?;
                scores.push(crate::tensor::sigmoid(logits[0]));
                match bag.label {
                    BagLabel::Class(y @ (0 | 1)) => labels.push(y as u8),
                    ref other => {
                        return Err(TrainError::LabelMismatch(
                            format!("{other:?}"),
                            "Binary".into(),
                        ))
                    }
                }
            }
            Ok(EvalMetrics::Classification(metrics::binary_metrics(&scores, &labels)?))
        }
        Head::Survival(_) => {
            let mut risks = Vec::with_capacity(bags.len());
            let mut records = Vec::with_capacity(bags.len());
            for bag in bags {
                let logits = predict_logits(model, bag)?;
                risks.push(metrics::risk_score(&logits));
                match &bag.label {
                    BagLabel::Survival(rec) => records.push(*rec),
                    other => {
                        return Err(TrainError::LabelMismatch(
                            format!("{other:?}"),
                            "Survival".into(),
                        ))
                    }
                }
            }
            Ok(EvalMetrics::Survival { c_index: metrics::c_index(&risks, &records)? })
        }
        Head::Multiclass(_) => {
            let mut correct = 0usize;
            for bag in bags {
                let logits = predict_logits(model, bag)?;
                let pred = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                match bag.label {
                    BagLabel::Class(y) if y as usize == pred => correct += 1,
                    BagLabel::Class(_) => {}
                    ref other => {
                        return Err(TrainError::LabelMismatch(
                            format!("{other:?}"),
                            "Multiclass".into(),
                        ))
                    }
                }
            }
            Ok(EvalMetrics::Classification(BinaryMetrics {
                accuracy: correct as f64 / bags.len() as f64,
                f1: f64::NAN,
                auc: None,
            }))
        }
    }
}

// ── training loop ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub mode: StepMode,
    /// Evaluate the held-out split every this many epochs (0 = only after
    /// the final epoch).
    pub eval_every: usize,
    /// Survival time bins.
    pub bins: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { mode: StepMode::Stacked, eval_every: 1, bins: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub eqv_loss: f64,
    pub metrics: Option<EvalMetrics>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn last_metrics(&self) -> Option<EvalMetrics> {
        self.records.iter().rev().find_map(|r| r.metrics)
    }

    /// Line-delimited records: epoch, losses, then metric fields.
    pub fn to_lines(&self) -> String {
        let survival = matches!(self.last_metrics(), Some(EvalMetrics::Survival { .. }));
        let mut out = String::from(if survival {
            "epoch,task_loss,eqv_loss,c_index\n"
        } else {
            "epoch,task_loss,eqv_loss,accuracy,f1,auc\n"
        });
        for r in &self.records {
            out.push_str(&format!("{},{:.6},{:.6}", r.epoch, r.task_loss, r.eqv_loss));
            match r.metrics {
                Some(EvalMetrics::Classification(m)) => {
                    out.push_str(&format!(",{:.6},{:.6}", m.accuracy, m.f1));
                    match m.auc {
                        Some(a) => out.push_str(&format!(",{a:.6}")),
                        None => out.push(','),
                    }
                }
                Some(EvalMetrics::Survival { c_index }) => {
                    out.push_str(&format!(",{c_index:.6}"));
                }
                None => out.push_str(if survival { "," } else { ",,," }),
            }
            out.push('\n');
        }
        out
    }
}

/// Assign survival time bins from the training split to every bag copy.
fn assign_bins(train: &mut [Bag], heldout: &mut [Bag], bins: usize) -> Result<(), TrainError> {
    let records: Vec<crate::metrics::SurvivalRecord> = train
        .iter()
        .filter_map(|b| match &b.label {
            BagLabel::Survival(r) => Some(*r),
            _ => None,
        })
        .collect();
    if records.is_empty() {
        return Err(MetricsError::NoUncensored.into());
    }
    let (edges, _) = metrics::time_bins(&records, bins)?;
    for bag in train.iter_mut().chain(heldout.iter_mut()) {
        if let BagLabel::Survival(rec) = &mut bag.label {
            rec.bin = Some(edges.assign(rec.time));
        }
    }
    Ok(())
}

/// Full training run: initializes from the config seed, loops epochs of
/// Siamese steps over a seeded shuffle of the bags, and records per-epoch
/// mean losses plus held-out metrics.
pub fn train<T: Scalar>(
    config: &ModelConfig,
    train_bags: &[Bag],
    heldout: &[Bag],
    settings: &TrainSettings,
) -> Result<(Model<T>, TrainReport), TrainError> {
    if train_bags.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model: Model<T> = Model::init(config.clone())?;
    let mut train_bags: Vec<Bag> = train_bags.to_vec();
    let mut heldout: Vec<Bag> = heldout.to_vec();
    if matches!(config.head, Head::Survival(_)) {
        assign_bins(&mut train_bags, &mut heldout, settings.bins)?;
    }

    let mut opt = AdamW::new(&config.opt, &model.params);
    let mut report = TrainReport::default();
    let seed = config.seed;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_bags.len()).collect();
        let mut order_rng = stream(seed, &[tag::EPOCH_ORDER, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut order_rng, 0..=i);
            order.swap(i, j);
        }
        let mut task_sum = 0.0;
        let mut eqv_sum = 0.0;
        for &idx in &order {
            let mut step_rng = stream(seed, &[tag::STEP_PERM, epoch as u64, idx as u64]);
            let out = siamese_step(
                &mut model,
                &train_bags[idx],
                config.lambda,
                &mut opt,
                settings.mode,
                &mut step_rng,
            )?;
            task_sum += out.task_loss;
            eqv_sum += out.equivalence_loss;
        }
        let evaluate_now = !heldout.is_empty()
            && (epoch + 1 == config.epochs
                || (settings.eval_every > 0 && (epoch + 1) % settings.eval_every == 0));
        let metrics = if evaluate_now { Some(evaluate(&model, &heldout)?) } else { None };
        report.records.push(EpochRecord {
            epoch,
            task_loss: task_sum / order.len() as f64,
            eqv_loss: eqv_sum / order.len() as f64,
            metrics,
        });
    }
    Ok((model, report))
}

// ── branch timing ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct ModeTiming {
    pub single_ms: f64,
    pub stacked_ms: f64,
    pub sequential_ms: f64,
}

impl ModeTiming {
    pub fn stacked_ratio(&self) -> f64 {
        self.stacked_ms / self.single_ms
    }

    pub fn sequential_ratio(&self) -> f64 {
        self.sequential_ms / self.single_ms
    }
}

/// Wall time per training step of the three execution strategies, measured
/// over `steps` steps on the same bags: single branch (no regularizer),
/// dual-branch stacked (concurrent), and dual-branch sequential.
pub fn benchmark_modes<T: Scalar>(
    config: &ModelConfig,
    bags: &[Bag],
    steps: usize,
) -> Result<ModeTiming, TrainError> {
    if bags.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let run = |lambda: f64, mode: StepMode| -> Result<f64, TrainError> {
        let mut cfg = config.clone();
        cfg.lambda = lambda;
        let mut model: Model<T> = Model::init(cfg)?;
        let mut opt = AdamW::new(&config.opt, &model.params);
        for (i, bag) in bags.iter().cycle().take(5).enumerate() {
            let mut rng = stream(7, &[tag::STEP_PERM, 0, i as u64]);
            siamese_step(&mut model, bag, lambda, &mut opt, mode, &mut rng)?;
        }
        let start = Instant::now();
        for (i, bag) in bags.iter().cycle().take(steps).enumerate() {
            let mut rng = stream(7, &[tag::STEP_PERM, 1, i as u64]);
            siamese_step(&mut model, bag, lambda, &mut opt, mode, &mut rng)?;
        }
        Ok(start.elapsed().as_secs_f64() * 1000.0 / steps as f64)
    };
    Ok(ModeTiming {
        single_ms: run(0.0, StepMode::Sequential)?,
        stacked_ms: run(1.0, StepMode::Stacked)?,
        sequential_ms: run(1.0, StepMode::Sequential)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_bags, SynthConfig, Task};
    use crate::nets::{PeMode, Variant};

    fn tiny_config(variant: Variant) -> ModelConfig {
        let mut cfg = ModelConfig::new(variant, 8);
        cfg.embed_dim = 16;
        cfg.attn_dim = 8;
        cfg.seed = 5;
        cfg
    }

    fn tiny_bags(count: usize) -> Vec<Bag> {
        let cfg = SynthConfig {
            grid_side: 3,
            feat_dim: 8,
            delta: 1.5,
            noise: 1.0,
            blob_min: 1,
            blob_max: 2,
            positive_fraction: 0.5,
            hazard_scale: 4.0,
            censor_rate: 0.2,
        };
        gen_bags(&cfg, Task::Classification, 42, count).unwrap()
    }

    #[test]
    fn final_loss_composition() {
        assert_eq!(final_loss(0.7, 0.3, 0.0).unwrap(), 0.7);
        assert!((final_loss(0.7, 0.3, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(final_loss(0.1, 0.1, -1.0).is_err());
    }

    #[test]
    fn equivalence_mse_reference_cases() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        // identity permutation, equal maps: zero
        let id = Permutation::identity(2);
        assert_eq!(equivalence_mse(&f, &f, &id).unwrap(), 0.0);
        // shuffled map constructed as perm(f): zero for any permutation
        let p = Permutation::from_indices(vec![1, 0]).unwrap();
        let fs = p.apply(&f).unwrap();
        assert_eq!(equivalence_mse(&f, &fs, &p).unwrap(), 0.0);
        // hand case: identity perm, swapped features -> (1/4) * 4 = 1
        assert_eq!(equivalence_mse(&f, &fs, &id).unwrap(), 1.0);
    }

    #[test]
    fn adamw_closed_form_single_step() {
        let mut params: ParamSet<f64> = ParamSet::new();
        params.register("p", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&crate::nets::OptimizerConfig::default(), &params);
        opt.step(&mut params, &[vec![2.0]]).unwrap();
        // m=.2, v=.004, m_hat=2, v_hat=4 -> update lr*2/(2+eps); decay lr*wd
        let expected = 1.0 - 5e-4 * (2.0 / (2.0 + 1e-8)) - 5e-4 * 1e-4;
        let got = params.get("p").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn adamw_zero_grad_behavior() {
        let mut params: ParamSet<f64> = ParamSet::new();
        params.register("p", Tensor::new(vec![2], vec![1.0, -3.0]).unwrap());
        // wd = 0: parameters unchanged under zero gradients
        let cfg =
            crate::nets::OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(&cfg, &params);
        opt.step(&mut params, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(params.get("p").unwrap().data(), &[1.0, -3.0]);

        // wd = 1e-4, lr = 5e-4: pure decay by (1 - 5e-8)
        let mut params: ParamSet<f64> = ParamSet::new();
        params.register("p", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&crate::nets::OptimizerConfig::default(), &params);
        opt.step(&mut params, &[vec![0.0]]).unwrap();
        let got = params.get("p").unwrap().data()[0];
        assert!((got - (1.0 - 5e-8)).abs() < 1e-15);
    }

    #[test]
    fn stacked_and_sequential_agree_per_seed() {
        let bags = tiny_bags(3);
        for variant in [Variant::Transformer, Variant::Cnn] {
            let run = |mode: StepMode| -> (Vec<f64>, Vec<f64>) {
                let cfg = tiny_config(variant);
                let mut model: Model<f64> = Model::init(cfg).unwrap();
                let mut opt = AdamW::new(&model.config.opt.clone(), &model.params);
                let mut losses = Vec::new();
                for (i, bag) in bags.iter().enumerate() {
                    let mut rng = stream(9, &[tag::STEP_PERM, 0, i as u64]);
                    let out =
                        siamese_step(&mut model, bag, 1.0, &mut opt, mode, &mut rng).unwrap();
                    losses.push(out.total_loss);
                }
                let params =
                    model.params.iter().flat_map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>();
                (losses, params)
            };
            let (l1, p1) = run(StepMode::Stacked);
            let (l2, p2) = run(StepMode::Sequential);
            for (a, b) in l1.iter().zip(&l2) {
                assert!((a - b).abs() < 1e-6, "{variant:?}: stacked {a} vs sequential {b}");
            }
            for (a, b) in p1.iter().zip(&p2) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lambda_zero_matches_plain_single_branch_training() {
        let bags = tiny_bags(4);
        let cfg = tiny_config(Variant::Transformer);

        // plain training step written independently of siamese_step
        let mut plain: Model<f64> = Model::init(cfg.clone()).unwrap();
        let mut plain_opt = AdamW::new(&cfg.opt, &plain.params);
        for bag in &bags {
            let y = match bag.label {
                BagLabel::Class(y) => y as f64,
                _ => unreachable!(),
            };
            let x = bag_features::<f64>(bag);
            let (x_pad, m) = pad_instances(&x);
            let mut tape = Tape::new();
            let binding = plain.bind(&mut tape, true);
            let xid = tape.leaf(x_pad, false);
            let f = backbone_padded(&mut tape, &binding, xid, m).unwrap();
            let logits = classify(&mut tape, &binding, f).unwrap();
            let sp = tape.softplus(logits).unwrap();
            let lin = tape.scalar_mul(logits, -y).unwrap();
            let loss = tape.add(sp, lin).unwrap();
            tape.backward(loss).unwrap();
            let sizes: Vec<usize> = plain.params.iter().map(|(_, t)| t.numel()).collect();
            let grads: Vec<Vec<f64>> = binding
                .ids()
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; sizes[i]])
                })
                .collect();
            drop(binding);
            drop(tape);
            plain_opt.step(&mut plain.params, &grads).unwrap();
        }

        let mut zero: Model<f64> = Model::init(cfg.clone()).unwrap();
        let mut opt = AdamW::new(&cfg.opt, &zero.params);
        for (i, bag) in bags.iter().enumerate() {
            let mut rng = stream(11, &[tag::STEP_PERM, 0, i as u64]);
            let out =
                siamese_step(&mut zero, bag, 0.0, &mut opt, StepMode::Stacked, &mut rng).unwrap();
            assert_eq!(out.equivalence_loss, 0.0);
            assert!(out.logits_shuffled.is_none());
            assert_eq!(out.total_loss, out.task_loss);
        }
        for ((_, a), (_, b)) in plain.params.iter().zip(zero.params.iter()) {
            assert!(a.max_abs_diff(b) < 1e-10, "plain and lambda=0 updates diverged");
        }
    }

    #[test]
    fn equivalence_loss_vanishes_for_rowwise_backbones() {
        // A per-row map commutes with shuffling exactly, so the regularizer
        // sees zero on its features.
        let x = Tensor::from_rows(&[
            vec![0.3, -0.2, 0.5, 1.0, 0.0, 0.1, 0.2, -0.4],
            vec![1.0, 0.5, -0.5, 0.2, 0.1, 0.3, 0.0, 0.7],
            vec![-1.0, 0.2, 0.4, 0.6, -0.3, 0.2, 0.9, 0.1],
            vec![0.0, 0.0, 1.0, -1.0, 0.5, 0.5, -0.5, 0.25],
        ])
        .unwrap();
        let model: Model<f64> = Model::init(tiny_config(Variant::MeanPool)).unwrap();
        let perm = Permutation::from_indices(vec![2, 0, 3, 1]).unwrap();
        let rowwise = |input: &Tensor<f64>| -> Tensor<f64> {
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let xid = tape.leaf(input.clone(), false);
            let e = crate::nets::mlp_embed(&mut tape, &b, xid).unwrap();
            tape.value(e).clone()
        };
        let f_u = rowwise(&x);
        let f_s = rowwise(&perm.apply(&x).unwrap());
        assert_eq!(equivalence_mse(&f_u, &f_s, &perm).unwrap(), 0.0);
    }

    #[test]
    fn equivalence_gradient_matches_finite_differences() {
        let mut cfg = tiny_config(Variant::Cnn);
        cfg.identity_start = false;
        let model: Model<f64> = Model::init(cfg).unwrap();
        let bag = &tiny_bags(1)[0];
        let x = bag_features::<f64>(bag);
        let (x_pad, m) = pad_instances(&x);
        let slots = x_pad.shape()[0];
        let perm = Permutation::sample(slots, &mut stream(3, &[tag::STEP_PERM])).unwrap();
        let x_shuf = perm.apply(&x_pad).unwrap();

        let eqv_of = |m_ref: &Model<f64>| -> f64 {
            let bu = run_spatial_branch(m_ref, &x_pad, m).unwrap();
            let bs = run_spatial_branch(m_ref, &x_shuf, m).unwrap();
            let fu = bu.tape.value(bu.features.unwrap()).to_f64();
            let fs = bs.tape.value(bs.features.unwrap()).to_f64();
            equivalence_mse(&fu, &fs, &perm).unwrap()
        };

        let mut bu = run_spatial_branch(&model, &x_pad, m).unwrap();
        let mut bs = run_spatial_branch(&model, &x_shuf, m).unwrap();
        let fu = bu.features.unwrap();
        let fs = bs.features.unwrap();
        let mut head: Tape<f64> = Tape::new();
        let fu_leaf = head.leaf(bu.tape.value(fu).clone(), true);
        let fs_leaf = head.leaf(bs.tape.value(fs).clone(), true);
        let reference = head.gather(fu_leaf, perm.indices()).unwrap();
        let diff = head.sub(fs_leaf, reference).unwrap();
        let sq = head.sq_norm(diff).unwrap();
        let eqv = head.scalar_mul(sq, 1.0 / (2.0 * slots as f64)).unwrap();
        head.backward(eqv).unwrap();
        bu.tape.backward_seeded(&[(fu, head.take_grad(fu_leaf).unwrap())]).unwrap();
        bs.tape.backward_seeded(&[(fs, head.take_grad(fs_leaf).unwrap())]).unwrap();

        let name = "res0.conv1";
        let pos = model.params.position(name).unwrap();
        let gu = bu.tape.grad(bu.binding.ids()[pos]).unwrap();
        let gs = bs.tape.grad(bs.binding.ids()[pos]).unwrap();
        let eps = 1e-5;
        for e in [0usize, 7, 55, 120] {
            let analytic = gu[e] + gs[e];
            let mut plus = model.clone();
            plus.params.get_mut(name).unwrap().data_mut()[e] += eps;
            let mut minus = model.clone();
            minus.params.get_mut(name).unwrap().data_mut()[e] -= eps;
            let fd = (eqv_of(&plus) - eqv_of(&minus)) / (2.0 * eps);
            assert!(
                (analytic - fd).abs() / fd.abs().max(1.0) < 1e-4,
                "{name}[{e}]: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn train_loop_runs_and_reports() {
        let bags = tiny_bags(12);
        let mut cfg = tiny_config(Variant::Transformer);
        cfg.epochs = 2;
        let settings = TrainSettings { mode: StepMode::Sequential, eval_every: 1, bins: 4 };
        let (_model, report) = train::<f32>(&cfg, &bags[..8], &bags[8..], &settings).unwrap();
        assert_eq!(report.records.len(), 2);
        assert!(report.records.iter().all(|r| r.task_loss.is_finite()));
        assert!(report.records.iter().all(|r| r.eqv_loss.is_finite()));
        assert!(report.last_metrics().is_some());
        let lines = report.to_lines();
        assert!(lines.starts_with("epoch,task_loss,eqv_loss,accuracy"));
        assert_eq!(lines.lines().count(), 3);

        // epochs = 0: parameters unchanged from initialization
        let mut cfg0 = cfg.clone();
        cfg0.epochs = 0;
        let (m0, r0) = train::<f32>(&cfg0, &bags[..8], &[], &settings).unwrap();
        let fresh: Model<f32> = Model::init(cfg0).unwrap();
        for ((_, a), (_, b)) in m0.params.iter().zip(fresh.params.iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert!(r0.records.is_empty());
    }

    #[test]
    fn training_reduces_total_loss_on_separable_bags() {
        let bags = tiny_bags(10);
        let mut cfg = tiny_config(Variant::Cnn);
        cfg.opt.lr = 3e-3;
        let mut model: Model<f64> = Model::init(cfg).unwrap();
        let mut opt = AdamW::new(&model.config.opt.clone(), &model.params);
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..50 {
            let bag = &bags[step % bags.len()];
            let mut rng = stream(21, &[tag::STEP_PERM, step as u64]);
            let out =
                siamese_step(&mut model, bag, 1.0, &mut opt, StepMode::Stacked, &mut rng).unwrap();
            if step == 0 {
                first = out.total_loss;
            }
            last = out.total_loss;
        }
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = tiny_config(Variant::Transformer);
        assert!(matches!(
            train::<f64>(&cfg, &[], &[], &TrainSettings::default()),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn survival_training_smoke() {
        let synth = SynthConfig {
            grid_side: 3,
            feat_dim: 8,
            delta: 1.5,
            noise: 1.0,
            blob_min: 1,
            blob_max: 3,
            positive_fraction: 0.5,
            hazard_scale: 4.0,
            censor_rate: 0.2,
        };
        let bags = gen_bags(&synth, Task::Survival, 33, 16).unwrap();
        let mut cfg = tiny_config(Variant::Cnn);
        cfg.head = Head::Survival(3);
        cfg.epochs = 1;
        let settings = TrainSettings { bins: 3, ..Default::default() };
        let (_model, report) = train::<f32>(&cfg, &bags[..12], &bags[12..], &settings).unwrap();
        match report.last_metrics() {
            Some(EvalMetrics::Survival { c_index }) => assert!((0.0..=1.0).contains(&c_index)),
            other => panic!("expected survival metrics, got {other:?}"),
        }
    }

    #[test]
    fn equivariant_backbone_sees_zero_equivalence_loss() {
        // without positional encoding the transformer backbone commutes with
        // shuffling on a perfect-square bag
        let mut cfg = tiny_config(Variant::Transformer);
        cfg.pe = PeMode::None;
        cfg.identity_start = false;
        let mut model: Model<f64> = Model::init(cfg).unwrap();
        let mut opt = AdamW::new(&model.config.opt.clone(), &model.params);
        let bag = tiny_bags(1).remove(0); // 3x3 grid: 9 instances, no padding
        assert_eq!(bag.n(), 9);
        let mut rng = stream(2, &[tag::STEP_PERM]);
        let out =
            siamese_step(&mut model, &bag, 1.0, &mut opt, StepMode::Stacked, &mut rng).unwrap();
        assert!(out.equivalence_loss < 1e-12, "equivariant backbone: {}", out.equivalence_loss);
    }

    #[test]
    fn survival_task_loss_matches_reference_nll() {
        // the in-graph survival loss agrees with the pure function
        let logits = [0.4, -0.3, 0.9];
        for (bin, event) in [(0, true), (1, true), (2, true), (0, false), (2, false)] {
            let mut tape: Tape<f64> = Tape::new();
            let z = tape.leaf(Tensor::new(vec![1, 3], logits.to_vec()).unwrap(), false);
            let node = task_loss_graph(&mut tape, z, TaskTarget::Survival { bin, event }).unwrap();
            let graph_loss = tape.value(node).data()[0];
            let reference = metrics::survival_nll(&logits, bin, event).unwrap();
            assert!(
                (graph_loss - reference).abs() < 1e-12,
                "bin {bin} event {event}: {graph_loss} vs {reference}"
            );
        }
    }
}
