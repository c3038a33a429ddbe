//! Per-instance class evidence maps for models that end in global average
//! pooling plus a linear head.
//!
//! For per-slot features `F` and head weights `w` of class `c`, the slot
//! score is `sum_l w_l F[slot][l]`; by linearity the mean slot score plus
//! the head bias reconstructs the class logit exactly. Padded slots get
//! scores too (the identity needs them) but are excluded from localization
//! scoring, since they duplicate real instances.

use crate::metrics::{self, MetricsError};
use crate::tensor::Tensor;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("class {class} out of range for head width {width}")]
    ClassOutOfRange { class: usize, width: usize },
    #[error("feature width {features} does not match head rows {head}")]
    WidthMismatch { features: usize, head: usize },
    #[error("{context}: {source}")]
    Metrics { context: &'static str, source: MetricsError },
    #[error("io error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Slot scores for one class over the padded grid.
#[derive(Debug, Clone)]
pub struct CamResult {
    /// One score per grid slot (row-major), real instances first.
    pub slot_scores: Vec<f64>,
    /// Number of real instances (leading slots).
    pub real_instances: usize,
    pub grid_side: usize,
    pub class: usize,
    /// Head bias of the class, for the reconstruction identity.
    pub bias: f64,
}

impl CamResult {
    /// Scores of the real instances only.
    pub fn instance_scores(&self) -> &[f64] {
        &self.slot_scores[..self.real_instances]
    }

    /// `mean(slot scores) + bias`, which equals the class logit.
    pub fn reconstructed_logit(&self) -> f64 {
        let mean: f64 =
            self.slot_scores.iter().sum::<f64>() / self.slot_scores.len() as f64;
        mean + self.bias
    }
}

/// Class evidence per slot: the head weight column applied to each feature
/// row. `features` is `[slots, width]`, `head_w` is `[width, classes]`.
pub fn cam(
    features: &Tensor<f64>,
    head_w: &Tensor<f64>,
    head_b: &[f64],
    class: usize,
    real_instances: usize,
    grid_side: usize,
) -> Result<CamResult, InterpretError> {
    let width = features.shape()[1];
    let classes = head_w.shape()[1];
    if class >= classes || class >= head_b.len() {
        return Err(InterpretError::ClassOutOfRange { class, width: classes });
    }
    if head_w.shape()[0] != width {
        return Err(InterpretError::WidthMismatch { features: width, head: head_w.shape()[0] });
    }
    let slots = features.shape()[0];
    let mut slot_scores = Vec::with_capacity(slots);
    for i in 0..slots {
        let row = features.row(i);
        let score: f64 =
            row.iter().enumerate().map(|(l, &f)| f * head_w.data()[l * classes + class]).sum();
        slot_scores.push(score);
    }
    Ok(CamResult { slot_scores, real_instances, grid_side, class, bias: head_b[class] })
}

/// How well the evidence map ranks true positive instances: AUC of the
/// per-instance scores against ground-truth instance labels, padded slots
/// excluded.
pub fn cam_localization_auc(
    result: &CamResult,
    instance_labels: &[bool],
) -> Result<f64, InterpretError> {
    let labels: Vec<u8> = instance_labels.iter().map(|&l| l as u8).collect();
    metrics::auc(result.instance_scores(), &labels[..result.real_instances])
        .map_err(|source| InterpretError::Metrics { context: "localization auc", source })
}

/// Line-delimited export: `index,row,col,score` per real instance.
pub fn export_lines(result: &CamResult, coords: Option<&[(u32, u32)]>) -> String {
    let mut out = String::from("index,row,col,score\n");
    for (i, &score) in result.instance_scores().iter().enumerate() {
        let (r, c) = coords
            .and_then(|cs| cs.get(i).copied())
            .unwrap_or(((i / result.grid_side) as u32, (i % result.grid_side) as u32));
        out.push_str(&format!("{i},{r},{c},{score:.6}\n"));
    }
    out
}

/// Portable graymap (plain PGM) of the full slot grid, min-max normalized.
pub fn export_pgm(result: &CamResult, path: &Path) -> Result<(), InterpretError> {
    let m = result.grid_side;
    let lo = result.slot_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = result.slot_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P2\n{m} {m}\n255\n");
    for row in 0..m {
        let line: Vec<String> = (0..m)
            .map(|col| {
                let v = result.slot_scores[row * m + col];
                format!("{}", ((v - lo) * scale).round() as u32)
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| InterpretError::Io { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};
    use rand::Rng;

    fn random_case(
        rng: &mut crate::rng::Pcg,
        slots: usize,
        width: usize,
        classes: usize,
    ) -> (Tensor<f64>, Tensor<f64>, Vec<f64>) {
        let f = Tensor::new(
            vec![slots, width],
            (0..slots * width).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let w = Tensor::new(
            vec![width, classes],
            (0..width * classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        (f, w, b)
    }

    #[test]
    fn zero_head_gives_zero_map() {
        let f = Tensor::new(vec![4, 3], vec![1.0; 12]).unwrap();
        let w = Tensor::zeros(vec![3, 2]);
        let r = cam(&f, &w, &[0.0, 0.0], 1, 4, 2).unwrap();
        assert!(r.slot_scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_slot_unit_weight_reads_feature() {
        let f = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let mut w = Tensor::zeros(vec![3, 1]);
        w.data_mut()[0] = 1.0;
        let r = cam(&f, &w, &[0.0], 0, 1, 1).unwrap();
        assert_eq!(r.slot_scores, vec![1.0]);
    }

    #[test]
    fn reconstruction_identity_over_random_cases() {
        let mut rng = stream(61, &[tag::VERIFY, 1]);
        for _ in 0..200 {
            let slots = rng.random_range(1..=16);
            let width = rng.random_range(1..=8);
            let classes = rng.random_range(1..=3);
            let class = rng.random_range(0..classes);
            let (f, w, b) = random_case(&mut rng, slots, width, classes);
            let r = cam(&f, &w, &b, class, slots, 1).unwrap();
            // direct logit: head over the mean feature row
            let mean: Vec<f64> = (0..width)
                .map(|l| (0..slots).map(|i| f.row(i)[l]).sum::<f64>() / slots as f64)
                .collect();
            let logit: f64 = mean
                .iter()
                .enumerate()
                .map(|(l, &v)| v * w.data()[l * classes + class])
                .sum::<f64>()
                + b[class];
            assert!(
                (r.reconstructed_logit() - logit).abs() < 1e-6,
                "identity violated: {} vs {logit}",
                r.reconstructed_logit()
            );
        }
    }

    #[test]
    fn map_is_linear_in_head_weights() {
        let mut rng = stream(62, &[tag::VERIFY, 2]);
        let (f, w, b) = random_case(&mut rng, 6, 4, 2);
        let r1 = cam(&f, &w, &b, 0, 6, 1).unwrap();
        let w2 = w.map(|x| 3.0 * x);
        let r2 = cam(&f, &w2, &b, 0, 6, 1).unwrap();
        for (a, b) in r1.slot_scores.iter().zip(&r2.slot_scores) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn localization_auc_reference_cases() {
        let labels = [true, false, true, false];
        // scores equal to the labels: perfect ranking
        let r = CamResult {
            slot_scores: vec![1.0, 0.0, 1.0, 0.0],
            real_instances: 4,
            grid_side: 2,
            class: 0,
            bias: 0.0,
        };
        assert_eq!(cam_localization_auc(&r, &labels).unwrap(), 1.0);
        // constant scores: chance from ties
        let r = CamResult { slot_scores: vec![0.5; 4], ..r };
        assert_eq!(cam_localization_auc(&r, &labels).unwrap(), 0.5);
        // single-class labels rejected
        let r2 = CamResult {
            slot_scores: vec![0.1, 0.2],
            real_instances: 2,
            grid_side: 2,
            class: 0,
            bias: 0.0,
        };
        assert!(cam_localization_auc(&r2, &[true, true]).is_err());
    }

    #[test]
    fn padded_slots_are_excluded_from_localization() {
        let r = CamResult {
            // two real instances + two padded slots with wild scores
            slot_scores: vec![1.0, 0.0, 100.0, -100.0],
            real_instances: 2,
            grid_side: 2,
            class: 0,
            bias: 0.0,
        };
        assert_eq!(cam_localization_auc(&r, &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn exports_are_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let r = CamResult {
            slot_scores: vec![0.0, 1.0, 2.0, 3.0],
            real_instances: 3,
            grid_side: 2,
            class: 0,
            bias: 0.1,
        };
        let lines = export_lines(&r, None);
        assert_eq!(lines.lines().count(), 4); // header + 3 real instances
        let path = dir.path().join("cam.pgm");
        export_pgm(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("P2\n2 2\n255\n"));
        assert!(text.contains("255"));
    }
}
