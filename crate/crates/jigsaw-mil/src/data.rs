//! Bags: synthetic spatially-correlated generation, a binary bag file
//! format, and manifest-driven dataset loading.
//!
//! A bag is one sample: an instance feature matrix with optional grid
//! coordinates, a classification or survival label, and optional
//! ground-truth instance labels. Synthetic bags emulate tiled-image feature
//! bags: negatives are pure background noise, positives carry one contiguous
//! rectangle of shifted-mean instances, so per-instance evidence is weak and
//! spatial contiguity carries the signal.

use crate::metrics::SurvivalRecord;
use crate::rng::{stream, tag, Pcg};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"MILB";
const VERSION: u32 = 1;
const FLAG_COORDS: u32 = 1;
const FLAG_INSTANCE_LABELS: u32 = 2;
const FLAG_SURVIVAL: u32 = 4;

/// Mean event time at the baseline hazard, in arbitrary time units.
const TIME_SCALE: f64 = 12.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad bag file at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("invalid bag: {0}")]
    InvalidBag(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("manifest references missing files: {0:?}")]
    MissingFiles(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BagLabel {
    Class(u32),
    Survival(SurvivalRecord),
}

/// One sample: `n` instances of `d` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub features: Tensor<f32>,
    /// (row, col) grid coordinate per instance; unique when present.
    pub coords: Option<Vec<(u32, u32)>>,
    pub label: BagLabel,
    pub instance_labels: Option<Vec<bool>>,
}

impl Bag {
    pub fn n(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.n();
        if let Some(coords) = &self.coords {
            if coords.len() != n {
                return Err(DataError::InvalidBag(format!(
                    "{} coords for {n} instances",
                    coords.len()
                )));
            }
            let unique: HashSet<_> = coords.iter().collect();
            if unique.len() != n {
                return Err(DataError::InvalidBag("duplicate grid coordinates".into()));
            }
        }
        if let Some(labels) = &self.instance_labels {
            if labels.len() != n {
                return Err(DataError::InvalidBag(format!(
                    "{} instance labels for {n} instances",
                    labels.len()
                )));
            }
            // standard bag rule: positive iff at least one positive instance
            if let BagLabel::Class(y @ (0 | 1)) = self.label {
                let any = labels.iter().any(|&l| l);
                if (y == 1) != any {
                    return Err(DataError::InvalidBag(format!(
                        "bag label {y} contradicts instance labels (any positive: {any})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Synthetic generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Instances form a grid_side x grid_side grid.
    pub grid_side: usize,
    pub feat_dim: usize,
    /// Mean separation between background and lesion instances.
    pub delta: f64,
    pub noise: f64,
    /// Lesion rectangles have sides in [blob_min, blob_max].
    pub blob_min: usize,
    pub blob_max: usize,
    pub positive_fraction: f64,
    pub hazard_scale: f64,
    pub censor_rate: f64,
}

impl SynthConfig {
    /// Weakly informative instances on a 12x12 grid; spatial contiguity
    /// carries most of the signal.
    pub fn hard() -> Self {
        Self {
            grid_side: 12,
            feat_dim: 64,
            delta: 0.6,
            noise: 1.0,
            blob_min: 2,
            blob_max: 4,
            positive_fraction: 0.5,
            hazard_scale: 4.0,
            censor_rate: 0.2,
        }
    }

    /// Well-separated instances for interpretability runs.
    pub fn easy() -> Self {
        Self { delta: 2.0, ..Self::hard() }
    }

    /// Survival flavor: lesion size spreads wide so the positive fraction
    /// spans a broad risk range.
    pub fn survival() -> Self {
        Self { blob_min: 6, blob_max: 12, ..Self::hard() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.grid_side == 0 || self.feat_dim == 0 {
            return Err(DataError::InvalidConfig("grid_side and feat_dim must be positive".into()));
        }
        if !(1 <= self.blob_min && self.blob_min <= self.blob_max && self.blob_max <= self.grid_side)
        {
            return Err(DataError::InvalidConfig(format!(
                "blob sides must satisfy 1 <= {} <= {} <= {}",
                self.blob_min, self.blob_max, self.grid_side
            )));
        }
        if self.delta < 0.0 || self.noise <= 0.0 {
            return Err(DataError::InvalidConfig("delta >= 0 and noise > 0 required".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction)
            || !(0.0..=1.0).contains(&self.censor_rate)
        {
            return Err(DataError::InvalidConfig("fractions must lie in [0,1]".into()));
        }
        if self.hazard_scale < 0.0 {
            return Err(DataError::InvalidConfig("hazard_scale must be >= 0".into()));
        }
        Ok(())
    }

    pub fn instances(&self) -> usize {
        self.grid_side * self.grid_side
    }
}

/// Grid features with an optional lesion rectangle; returns the feature
/// matrix, per-instance labels, and coordinates.
fn gen_grid(
    cfg: &SynthConfig,
    rng: &mut Pcg,
    positive: bool,
) -> (Tensor<f32>, Vec<bool>, Vec<(u32, u32)>) {
    let g = cfg.grid_side;
    let n = cfg.instances();
    let d = cfg.feat_dim;
    let normal = Normal::new(0.0, cfg.noise).expect("noise > 0");

    let mut labels = vec![false; n];
    if positive {
        let h = rng.random_range(cfg.blob_min..=cfg.blob_max);
        let w = rng.random_range(cfg.blob_min..=cfg.blob_max);
        let top = rng.random_range(0..=g - h);
        let left = rng.random_range(0..=g - w);
        for r in top..top + h {
            for c in left..left + w {
                labels[r * g + c] = true;
            }
        }
    }

    let mut data = vec![0.0f32; n * d];
    for (i, row) in data.chunks_exact_mut(d).enumerate() {
        for v in row.iter_mut() {
            *v = normal.sample(rng) as f32;
        }
        if labels[i] {
            row[0] += cfg.delta as f32; // lesion mean sits along the first axis
        }
    }
    let coords = (0..n).map(|i| ((i / g) as u32, (i % g) as u32)).collect();
    (Tensor::new(vec![n, d], data).expect("grid shape"), labels, coords)
}

pub fn gen_classification_bag(cfg: &SynthConfig, rng: &mut Pcg) -> Result<Bag, DataError> {
    cfg.validate()?;
    let positive = rng.random_bool(cfg.positive_fraction);
    let (features, labels, coords) = gen_grid(cfg, rng, positive);
    let bag = Bag {
        features,
        coords: Some(coords),
        label: BagLabel::Class(positive as u32),
        instance_labels: Some(labels),
    };
    bag.validate()?;
    Ok(bag)
}

pub fn gen_survival_bag(cfg: &SynthConfig, rng: &mut Pcg) -> Result<Bag, DataError> {
    cfg.validate()?;
    let positive = rng.random_bool(cfg.positive_fraction);
    let (features, labels, coords) = gen_grid(cfg, rng, positive);
    let pos_fraction = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    // Event rate grows exponentially with the lesion fraction so that the
    // fraction itself orders survival times well above chance even through
    // exponential sampling noise.
    let rate = (cfg.hazard_scale * pos_fraction).exp();
    let raw = Exp::new(rate).expect("rate > 0").sample(rng) * TIME_SCALE;
    let (time, event) = if rng.random_bool(cfg.censor_rate) {
        (rng.random_range(0.0..raw.max(f64::MIN_POSITIVE)), false)
    } else {
        (raw, true)
    };
    let bag = Bag {
        features,
        coords: Some(coords),
        label: BagLabel::Survival(SurvivalRecord::new(time, event)),
        instance_labels: Some(labels),
    };
    bag.validate()?;
    Ok(bag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Survival,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Survival => "survival",
        }
    }
}

/// Generate bag `index` of a dataset. The stream is derived from
/// `(seed, bag index)`, so any subset can be generated in any order or in
/// parallel with identical results.
pub fn gen_bag(cfg: &SynthConfig, task: Task, seed: u64, index: u64) -> Result<Bag, DataError> {
    let mut rng = stream(seed, &[tag::BAG_GEN, index]);
    match task {
        Task::Classification => gen_classification_bag(cfg, &mut rng),
        Task::Survival => gen_survival_bag(cfg, &mut rng),
    }
}

pub fn gen_bags(
    cfg: &SynthConfig,
    task: Task,
    seed: u64,
    count: usize,
) -> Result<Vec<Bag>, DataError> {
    (0..count as u64).map(|i| gen_bag(cfg, task, seed, i)).collect()
}

// ── binary bag format ────────────────────────────────────────────────

pub fn write_bag(bag: &Bag, path: &Path) -> Result<(), DataError> {
    bag.validate()?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let mut flags = 0u32;
    if bag.coords.is_some() {
        flags |= FLAG_COORDS;
    }
    if bag.instance_labels.is_some() {
        flags |= FLAG_INSTANCE_LABELS;
    }
    if matches!(bag.label, BagLabel::Survival(_)) {
        flags |= FLAG_SURVIVAL;
    }
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&(bag.n() as u32).to_le_bytes());
    buf.extend_from_slice(&(bag.dim() as u32).to_le_bytes());
    for &v in bag.features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(coords) = &bag.coords {
        for &(r, c) in coords {
            buf.extend_from_slice(&r.to_le_bytes());
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    if let Some(labels) = &bag.instance_labels {
        buf.extend(labels.iter().map(|&l| l as u8));
    }
    match &bag.label {
        BagLabel::Survival(rec) => {
            buf.extend_from_slice(&rec.time.to_le_bytes());
            buf.push(rec.event as u8);
        }
        BagLabel::Class(y) => buf.extend_from_slice(&y.to_le_bytes()),
    }
    let mut file = std::fs::File::create(path)
        .map_err(|source| DataError::Io { path: path.into(), source })?;
    file.write_all(&buf).map_err(|source| DataError::Io { path: path.into(), source })
}

pub fn read_bag(path: &Path) -> Result<Bag, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DataError::Io { path: path.into(), source })?;
    let mut off = 0usize;
    let take = |off: &mut usize, k: usize| -> Result<&[u8], DataError> {
        if *off + k > bytes.len() {
            return Err(DataError::Format { offset: *off, detail: "truncated payload".into() });
        }
        let s = &bytes[*off..*off + k];
        *off += k;
        Ok(s)
    };
    let u32_at = |off: &mut usize| -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
    };

    if take(&mut off, 4)? != MAGIC {
        return Err(DataError::Format { offset: 0, detail: "bad magic, expected MILB".into() });
    }
    let version = u32_at(&mut off)?;
    if version != VERSION {
        return Err(DataError::Format { offset: 4, detail: format!("unknown version {version}") });
    }
    let flags = u32_at(&mut off)?;
    if flags & !(FLAG_COORDS | FLAG_INSTANCE_LABELS | FLAG_SURVIVAL) != 0 {
        return Err(DataError::Format {
            offset: 8,
            detail: format!("unknown flag bits {flags:#x}"),
        });
    }
    let n = u32_at(&mut off)? as usize;
    let d = u32_at(&mut off)? as usize;
    if n == 0 || d == 0 {
        return Err(DataError::Format { offset: 12, detail: "empty bag".into() });
    }
    let mut feat = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        feat.push(f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()));
    }
    let features = Tensor::new(vec![n, d], feat)
        .map_err(|e| DataError::Format { offset: off, detail: e.to_string() })?;
    let coords = if flags & FLAG_COORDS != 0 {
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            let r = u32_at(&mut off)?;
            let c = u32_at(&mut off)?;
            coords.push((r, c));
        }
        Some(coords)
    } else {
        None
    };
    let instance_labels = if flags & FLAG_INSTANCE_LABELS != 0 {
        let raw = take(&mut off, n)?;
        Some(raw.iter().map(|&b| b != 0).collect())
    } else {
        None
    };
    let label = if flags & FLAG_SURVIVAL != 0 {
        let time = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let event = take(&mut off, 1)?[0] != 0;
        BagLabel::Survival(SurvivalRecord::new(time, event))
    } else {
        BagLabel::Class(u32_at(&mut off)?)
    };
    if off != bytes.len() {
        return Err(DataError::Format { offset: off, detail: "trailing bytes".into() });
    }
    let bag = Bag { features, coords, label, instance_labels };
    bag.validate()?;
    Ok(bag)
}

// ── manifest ─────────────────────────────────────────────────────────

/// Bags grouped by split tag (`train`, `test`, `fold-k`, ...).
#[derive(Debug, Default)]
pub struct Dataset {
    pub splits: BTreeMap<String, Vec<Bag>>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> &[Bag] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }
}

/// Load a manifest of `path split` lines. Relative paths resolve against
/// the manifest's directory; duplicates are dropped with a warning; files
/// that do not exist are reported together.
pub fn load_manifest(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.into(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut entries: Vec<(PathBuf, String)> = Vec::new();
    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(file), Some(split), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(DataError::Manifest {
                line: lineno + 1,
                detail: format!("expected `path split`, got `{line}`"),
            });
        };
        let file =
            if Path::new(file).is_absolute() { PathBuf::from(file) } else { base.join(file) };
        if !seen.insert(file.clone()) {
            warnings.push(format!("duplicate bag path {} skipped", file.display()));
            continue;
        }
        entries.push((file, split.to_string()));
    }
    if entries.is_empty() {
        warnings.push("manifest lists no bags".into());
    }

    let missing: Vec<PathBuf> =
        entries.iter().map(|(p, _)| p.clone()).filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(DataError::MissingFiles(missing));
    }

    let mut splits: BTreeMap<String, Vec<Bag>> = BTreeMap::new();
    for (file, split) in entries {
        splits.entry(split).or_default().push(read_bag(&file)?);
    }
    Ok(Dataset { splits, warnings })
}

/// Write `train + test` bag files plus a manifest into `dir`.
pub fn write_dataset(
    cfg: &SynthConfig,
    task: Task,
    seed: u64,
    train: usize,
    test: usize,
    dir: &Path,
) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.into(), source })?;
    let mut manifest = String::new();
    for i in 0..train + test {
        let bag = gen_bag(cfg, task, seed, i as u64)?;
        let name = format!("bag_{i:05}.milb");
        write_bag(&bag, &dir.join(&name))?;
        let split = if i < train { "train" } else { "test" };
        manifest.push_str(&format!("{name}\t{split}\n"));
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest)
        .map_err(|source| DataError::Io { path: path.clone(), source })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    #[test]
    fn classification_bags_respect_the_bag_rule() {
        let cfg = SynthConfig::hard();
        for i in 0..50 {
            let bag = gen_bag(&cfg, Task::Classification, 3, i).unwrap();
            let labels = bag.instance_labels.as_ref().unwrap();
            match bag.label {
                BagLabel::Class(1) => assert!(labels.iter().any(|&l| l)),
                BagLabel::Class(0) => assert!(labels.iter().all(|&l| !l)),
                _ => panic!("unexpected label"),
            }
        }
    }

    #[test]
    fn positive_instances_form_one_rectangle() {
        let cfg = SynthConfig::hard();
        let g = cfg.grid_side;
        let mut saw_positive = false;
        for i in 0..40 {
            let bag = gen_bag(&cfg, Task::Classification, 4, i).unwrap();
            let labels = bag.instance_labels.as_ref().unwrap();
            if !labels.iter().any(|&l| l) {
                continue;
            }
            saw_positive = true;
            let rows: Vec<usize> =
                labels.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i / g).collect();
            let cols: Vec<usize> =
                labels.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i % g).collect();
            let (r0, r1) = (*rows.iter().min().unwrap(), *rows.iter().max().unwrap());
            let (c0, c1) = (*cols.iter().min().unwrap(), *cols.iter().max().unwrap());
            let h = r1 - r0 + 1;
            let w = c1 - c0 + 1;
            assert!(h >= cfg.blob_min && h <= cfg.blob_max);
            assert!(w >= cfg.blob_min && w <= cfg.blob_max);
            // bounding box fully positive: contiguous rectangle
            assert_eq!(labels.iter().filter(|&&l| l).count(), h * w);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    assert!(labels[r * g + c]);
                }
            }
        }
        assert!(saw_positive);
    }

    #[test]
    fn generation_is_deterministic_per_index() {
        let cfg = SynthConfig::hard();
        let a = gen_bag(&cfg, Task::Classification, 9, 17).unwrap();
        let b = gen_bag(&cfg, Task::Classification, 9, 17).unwrap();
        assert_eq!(a, b);
        // order independence: generating 0..n then picking 17 matches direct
        let all = gen_bags(&cfg, Task::Classification, 9, 20).unwrap();
        assert_eq!(all[17], a);
    }

    #[test]
    fn zero_separation_removes_the_feature_signal() {
        let mut cfg = SynthConfig::hard();
        cfg.delta = 0.0;
        let bags = gen_bags(&cfg, Task::Classification, 5, 2000).unwrap();
        let scores: Vec<f64> = bags
            .iter()
            .map(|b| {
                let d = b.dim();
                b.features.data().iter().step_by(d).map(|&v| v as f64).sum::<f64>() / b.n() as f64
            })
            .collect();
        let labels: Vec<u8> = bags
            .iter()
            .map(|b| match b.label {
                BagLabel::Class(y) => y as u8,
                _ => unreachable!(),
            })
            .collect();
        let auc = metrics::auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "expected chance-level auc, got {auc}");
    }

    #[test]
    fn survival_rate_scaling_behaves() {
        // hazard_scale = 0: no signal, chance-level concordance
        let mut cfg = SynthConfig::survival();
        cfg.hazard_scale = 0.0;
        cfg.censor_rate = 0.0;
        let bags = gen_bags(&cfg, Task::Survival, 6, 1500).unwrap();
        let (risks, records) = risks_and_records(&bags);
        let c = metrics::c_index(&risks, &records).unwrap();
        assert!((c - 0.5).abs() < 0.05, "expected chance c-index, got {c}");
        assert!(records.iter().all(|r| r.event), "censor_rate 0 must observe every event");

        // hazard_scale = 4: the true lesion fraction orders times well
        let cfg = SynthConfig::survival();
        let bags = gen_bags(&cfg, Task::Survival, 7, 2000).unwrap();
        let (risks, records) = risks_and_records(&bags);
        let c = metrics::c_index(&risks, &records).unwrap();
        assert!(c > 0.7, "expected informative c-index, got {c}");
    }

    fn risks_and_records(bags: &[Bag]) -> (Vec<f64>, Vec<SurvivalRecord>) {
        let risks = bags
            .iter()
            .map(|b| {
                let l = b.instance_labels.as_ref().unwrap();
                l.iter().filter(|&&x| x).count() as f64 / l.len() as f64
            })
            .collect();
        let records = bags
            .iter()
            .map(|b| match &b.label {
                BagLabel::Survival(r) => *r,
                _ => unreachable!(),
            })
            .collect();
        (risks, records)
    }

    #[test]
    fn bag_file_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::hard();
        for (i, task) in [(0u64, Task::Classification), (1, Task::Survival)] {
            let bag = gen_bag(&cfg, task, 11, i).unwrap();
            let path = dir.path().join(format!("b{i}.milb"));
            write_bag(&bag, &path).unwrap();
            let back = read_bag(&path).unwrap();
            assert_eq!(bag, back);
        }
    }

    #[test]
    fn bag_file_layout_is_pinned() {
        // n=1, d=2, no optional sections:
        // magic(4) + version(4) + flags(4) + n(4) + d(4) + features(8) + label(4)
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.milb");
        let bag = Bag {
            features: Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
            coords: None,
            label: BagLabel::Class(1),
            instance_labels: None,
        };
        write_bag(&bag, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 32);
    }

    #[test]
    fn corrupted_magic_is_rejected_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.milb");
        let bag = gen_bag(&SynthConfig::hard(), Task::Classification, 2, 0).unwrap();
        write_bag(&bag, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read_bag(&path) {
            Err(DataError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn manifest_grouping_dedup_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::hard();
        for i in 0..6 {
            let bag = gen_bag(&cfg, Task::Classification, 8, i).unwrap();
            write_bag(&bag, &dir.path().join(format!("b{i}.milb"))).unwrap();
        }
        let manifest = dir.path().join("manifest.tsv");

        // empty manifest: empty dataset, warning
        std::fs::write(&manifest, "").unwrap();
        let ds = load_manifest(&manifest).unwrap();
        assert_eq!(ds.total(), 0);
        assert!(!ds.warnings.is_empty());

        // folds + dedup
        std::fs::write(
            &manifest,
            "b0.milb fold-0\nb1.milb fold-0\nb2.milb fold-1\nb3.milb fold-1\n\
             b4.milb fold-2\nb5.milb fold-2\nb0.milb fold-2\n",
        )
        .unwrap();
        let ds = load_manifest(&manifest).unwrap();
        assert_eq!(ds.splits.len(), 3);
        assert_eq!(ds.split("fold-0").len(), 2);
        assert_eq!(ds.split("fold-2").len(), 2); // duplicate dropped
        assert_eq!(ds.warnings.len(), 1);

        // missing files reported collectively
        std::fs::write(&manifest, "nope1.milb train\nnope2.milb test\n").unwrap();
        match load_manifest(&manifest) {
            Err(DataError::MissingFiles(v)) => assert_eq!(v.len(), 2),
            other => panic!("expected missing files, got {other:?}"),
        }

        // unparseable line carries its number
        std::fs::write(&manifest, "b0.milb train\njust-one-field\n").unwrap();
        match load_manifest(&manifest) {
            Err(DataError::Manifest { line: 2, .. }) => {}
            other => panic!("expected manifest error on line 2, got {other:?}"),
        }
    }
}
