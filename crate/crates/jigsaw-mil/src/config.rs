//! Flat key=value run configuration with flag overrides.
//!
//! One pair per line, `#` comments. Later lines win within the file; flag
//! overrides win over the file; unknown keys are rejected with their name
//! and line. Defaults: lambda 1.0, lr 5e-4, weight decay 1e-4, 200 epochs
//! classification / 20 survival, transformer architecture, 4 time bins.

use crate::data::{SynthConfig, Task};
use crate::nets::{Head, ModelConfig, PeMode, Variant};
use crate::train::{StepMode, TrainSettings};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{key}`{place}")]
    UnknownKey { key: String, place: String },
    #[error("key `{key}`{place}: cannot parse `{value}`: {detail}")]
    BadValue { key: String, place: String, value: String, detail: String },
    #[error("key `{key}`: {detail}")]
    Constraint { key: String, detail: String },
    #[error("io error reading {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Everything a run needs: model, generator, and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub arch: Variant,
    pub pe: PeMode,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// None = task default (200 classification / 20 survival).
    pub epochs: Option<usize>,
    pub bins: usize,
    pub seed: u64,
    pub seeds: usize,
    pub mode: StepMode,
    pub eval_every: usize,
    pub precision: Precision,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub init_gain: f64,
    pub identity_start: bool,
    pub classify_shuffled: bool,
    pub synth: SynthConfig,
    pub train_bags: usize,
    pub test_bags: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            arch: Variant::Transformer,
            pe: PeMode::Ppeg,
            lambda: 1.0,
            lr: 5e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epochs: None,
            bins: 4,
            seed: 0,
            seeds: 1,
            mode: StepMode::Stacked,
            eval_every: 1,
            precision: Precision::F32,
            embed_dim: crate::nets::EMBED_DIM,
            attn_dim: 64,
            init_gain: 6f64.sqrt(),
            identity_start: true,
            classify_shuffled: false,
            synth: SynthConfig::hard(),
            train_bags: 400,
            test_bags: 200,
        }
    }
}

impl RunConfig {
    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.task {
            Task::Classification => 200,
            Task::Survival => 20,
        })
    }

    /// Assemble the model config for this run.
    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.arch, self.synth.feat_dim);
        cfg.embed_dim = self.embed_dim;
        cfg.attn_dim = self.attn_dim;
        cfg.lambda = if self.arch.is_spatial() { self.lambda } else { 0.0 };
        cfg.pe = self.pe;
        cfg.head = match self.task {
            Task::Classification => Head::Binary,
            Task::Survival => Head::Survival(self.bins),
        };
        cfg.opt.lr = self.lr;
        cfg.opt.weight_decay = self.weight_decay;
        cfg.opt.beta1 = self.beta1;
        cfg.opt.beta2 = self.beta2;
        cfg.epochs = self.epochs();
        cfg.seed = self.seed;
        cfg.init_gain = self.init_gain;
        cfg.identity_start = self.identity_start;
        cfg.classify_shuffled = self.classify_shuffled;
        cfg
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings { mode: self.mode, eval_every: self.eval_every, bins: self.bins }
    }

    /// Serialize every key so a run can be reproduced from its output dir.
    pub fn to_file_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("task", self.task.name().into());
        kv("arch", self.arch.name().into());
        kv("pe", self.pe.name().into());
        kv("lambda", self.lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("epochs", self.epochs().to_string());
        kv("bins", self.bins.to_string());
        kv("seed", self.seed.to_string());
        kv("seeds", self.seeds.to_string());
        kv("mode", self.mode.name().into());
        kv("eval_every", self.eval_every.to_string());
        kv("precision", if self.precision == Precision::F64 { "f64".into() } else { "f32".into() });
        kv("embed_dim", self.embed_dim.to_string());
        kv("attn_dim", self.attn_dim.to_string());
        kv("init_gain", self.init_gain.to_string());
        kv("identity_start", self.identity_start.to_string());
        kv("classify_shuffled", self.classify_shuffled.to_string());
        kv("grid", self.synth.grid_side.to_string());
        kv("feat_dim", self.synth.feat_dim.to_string());
        kv("delta", self.synth.delta.to_string());
        kv("noise", self.synth.noise.to_string());
        kv("blob_min", self.synth.blob_min.to_string());
        kv("blob_max", self.synth.blob_max.to_string());
        kv("positive_fraction", self.synth.positive_fraction.to_string());
        kv("hazard_scale", self.synth.hazard_scale.to_string());
        kv("censor_rate", self.synth.censor_rate.to_string());
        kv("train_bags", self.train_bags.to_string());
        kv("test_bags", self.test_bags.to_string());
        s
    }
}

/// Apply one key=value pair. `place` names the source for error messages.
fn apply(cfg: &mut RunConfig, key: &str, value: &str, place: &str) -> Result<(), ConfigError> {
    let bad = |detail: &str| ConfigError::BadValue {
        key: key.into(),
        place: place.into(),
        value: value.into(),
        detail: detail.into(),
    };
    macro_rules! parse {
        ($t:ty) => {
            value.parse::<$t>().map_err(|e| bad(&e.to_string()))?
        };
    }
    match key {
        "task" => {
            cfg.task = match value {
                "classification" => Task::Classification,
                "survival" => Task::Survival,
                _ => return Err(bad("expected classification|survival")),
            }
        }
        "arch" => {
            cfg.arch = match value {
                "transformer" => Variant::Transformer,
                "cnn" => Variant::Cnn,
                "abmil-baseline" => Variant::AbmilBaseline,
                "mean-pool" => Variant::MeanPool,
                "max-pool" => Variant::MaxPool,
                _ => return Err(bad("expected transformer|cnn|abmil-baseline|mean-pool|max-pool")),
            }
        }
        "pe" => {
            cfg.pe = match value {
                "none" => PeMode::None,
                "sinusoidal" => PeMode::Sinusoidal,
                "ppeg" => PeMode::Ppeg,
                _ => return Err(bad("expected none|sinusoidal|ppeg")),
            }
        }
        "lambda" => {
            let v = parse!(f64);
            if v < 0.0 {
                return Err(ConfigError::Constraint {
                    key: key.into(),
                    detail: format!("lambda must satisfy lambda >= 0, got {v}"),
                });
            }
            cfg.lambda = v;
        }
        "lr" => cfg.lr = parse!(f64),
        "weight_decay" => cfg.weight_decay = parse!(f64),
        "beta1" => cfg.beta1 = parse!(f64),
        "beta2" => cfg.beta2 = parse!(f64),
        "epochs" => cfg.epochs = Some(parse!(usize)),
        "bins" => {
            let v = parse!(usize);
            if v < 2 {
                return Err(ConfigError::Constraint {
                    key: key.into(),
                    detail: format!("need at least 2 bins, got {v}"),
                });
            }
            cfg.bins = v;
        }
        "seed" => cfg.seed = parse!(u64),
        "seeds" => {
            let v = parse!(usize);
            if v == 0 {
                return Err(ConfigError::Constraint {
                    key: key.into(),
                    detail: "need at least one seed".into(),
                });
            }
            cfg.seeds = v;
        }
        "mode" => {
            cfg.mode = match value {
                "stacked" => StepMode::Stacked,
                "sequential" => StepMode::Sequential,
                _ => return Err(bad("expected stacked|sequential")),
            }
        }
        "eval_every" => cfg.eval_every = parse!(usize),
        "precision" => {
            cfg.precision = match value {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                _ => return Err(bad("expected f32|f64")),
            }
        }
        "embed_dim" => cfg.embed_dim = parse!(usize),
        "attn_dim" => cfg.attn_dim = parse!(usize),
        "init_gain" => cfg.init_gain = parse!(f64),
        "identity_start" => cfg.identity_start = parse!(bool),
        "classify_shuffled" => cfg.classify_shuffled = parse!(bool),
        "grid" => cfg.synth.grid_side = parse!(usize),
        "feat_dim" => cfg.synth.feat_dim = parse!(usize),
        "delta" => cfg.synth.delta = parse!(f64),
        "noise" => cfg.synth.noise = parse!(f64),
        "blob_min" => cfg.synth.blob_min = parse!(usize),
        "blob_max" => cfg.synth.blob_max = parse!(usize),
        "positive_fraction" => cfg.synth.positive_fraction = parse!(f64),
        "hazard_scale" => cfg.synth.hazard_scale = parse!(f64),
        "censor_rate" => cfg.synth.censor_rate = parse!(f64),
        "train_bags" => cfg.train_bags = parse!(usize),
        "test_bags" => cfg.test_bags = parse!(usize),
        _ => return Err(ConfigError::UnknownKey { key: key.into(), place: place.into() }),
    }
    Ok(())
}

/// Resolve a config from optional file text plus flag overrides
/// (`key=value` pairs). Flags take precedence over the file.
pub fn parse_config(
    file_text: Option<&str>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(text) = file_text {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: lineno + 1, text: raw.trim().into() });
            };
            apply(&mut cfg, key.trim(), value.trim(), &format!(" (file line {})", lineno + 1))?;
        }
    }
    for (key, value) in overrides {
        apply(&mut cfg, key.trim(), value.trim(), " (flag)")?;
    }
    cfg.synth.validate().map_err(|e| ConfigError::Constraint {
        key: "synth".into(),
        detail: e.to_string(),
    })?;
    Ok(cfg)
}

/// Read and resolve a config file from disk.
pub fn load_config(
    path: Option<&std::path::Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|source| ConfigError::Io { path: p.into(), source })?,
        ),
        None => None,
    };
    parse_config(text.as_deref(), overrides)
}
