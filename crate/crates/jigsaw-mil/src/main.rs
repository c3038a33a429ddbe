//! Thin command-line front end over the library: dataset synthesis,
//! training/evaluation, verification suites, and evidence-map export.

use clap::{Args, Parser, Subcommand};
use jigsaw_mil::config::{self, Precision, RunConfig};
use jigsaw_mil::data::{self, Bag, Dataset};
use jigsaw_mil::info::{self, DiscreteJoint};
use jigsaw_mil::interpret;
use jigsaw_mil::nets::{load_params, save_params, Model};
use jigsaw_mil::tensor::Scalar;
use jigsaw_mil::train::{self, EvalMetrics, TrainReport};
use jigsaw_mil::verify::{self, VerifyOptions};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "jigsaw-mil", version, about = "Bag learning with a shuffling-equivalence regularizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by config-driven subcommands; every value overrides the
/// config file.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra overrides as key=value (repeatable, highest precedence).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    pe: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    feat_dim: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    blob_min: Option<String>,
    #[arg(long)]
    blob_max: Option<String>,
    #[arg(long)]
    positive_fraction: Option<String>,
    #[arg(long)]
    hazard_scale: Option<String>,
    #[arg(long)]
    censor_rate: Option<String>,
    #[arg(long)]
    train_bags: Option<String>,
    #[arg(long)]
    test_bags: Option<String>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                overrides.push((key.to_string(), v.clone()));
            }
        };
        push("task", &self.task);
        push("arch", &self.arch);
        push("pe", &self.pe);
        push("lambda", &self.lambda);
        push("lr", &self.lr);
        push("weight_decay", &self.weight_decay);
        push("beta2", &self.beta2);
        push("epochs", &self.epochs);
        push("bins", &self.bins);
        push("seed", &self.seed);
        push("seeds", &self.seeds);
        push("mode", &self.mode);
        push("eval_every", &self.eval_every);
        push("precision", &self.precision);
        push("grid", &self.grid);
        push("feat_dim", &self.feat_dim);
        push("delta", &self.delta);
        push("noise", &self.noise);
        push("blob_min", &self.blob_min);
        push("blob_max", &self.blob_max);
        push("positive_fraction", &self.positive_fraction);
        push("hazard_scale", &self.hazard_scale);
        push("censor_rate", &self.censor_rate);
        push("train_bags", &self.train_bags);
        push("test_bags", &self.test_bags);
        for pair in &self.set {
            let Some((k, v)) = pair.split_once('=') else {
                return Err(CliError::Message(format!("--set expects key=value, got `{pair}`")));
            };
            overrides.push((k.to_string(), v.to_string()));
        }
        Ok(config::load_config(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bag dataset plus manifest.
    Synth {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one or more models and evaluate on the test split.
    Train {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Manifest of bag files (from `synth` or external extraction).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated regularization strengths; one run set per value.
        #[arg(long)]
        lambda_sweep: Option<String>,
    },
    /// Evaluate a stored checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run every numerical property suite; exit nonzero on failure.
    Verify,
    /// Transport-specific property checks.
    OtCheck,
    /// Conditional-entropy quantities for built-in and user tables.
    EntropyDemo {
        /// Plain-text table: alphabet sizes on the first line, then
        /// probability rows.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Export per-instance evidence maps for one bag.
    Cam {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bag: PathBuf,
        #[arg(long, default_value_t = 0)]
        class: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a portable graymap of the score grid.
        #[arg(long)]
        pgm: bool,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Net(#[from] jigsaw_mil::nets::NetError),
    #[error(transparent)]
    Checkpoint(#[from] jigsaw_mil::nets::CheckpointError),
    #[error(transparent)]
    Interpret(#[from] interpret::InterpretError),
    #[error(transparent)]
    Info(#[from] info::InfoError),
    #[error(transparent)]
    Tensor(#[from] jigsaw_mil::tensor::TensorError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Message(String),
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Synth { flags, out } => {
            let cfg = flags.resolve()?;
            std::fs::create_dir_all(&out)
                .map_err(|source| CliError::Io { path: out.clone(), source })?;
            let manifest = data::write_dataset(
                &cfg.synth,
                cfg.task,
                cfg.seed,
                cfg.train_bags,
                cfg.test_bags,
                &out,
            )?;
            write_file(&out.join("resolved.config"), &cfg.to_file_text())?;
            println!(
                "wrote {} train + {} test bags under {}",
                cfg.train_bags,
                cfg.test_bags,
                out.display()
            );
            println!("manifest: {}", manifest.display());
            Ok(0)
        }
        Command::Train { flags, data: manifest, out, lambda_sweep } => {
            let cfg = flags.resolve()?;
            let dataset = data::load_manifest(&manifest)?;
            for w in &dataset.warnings {
                eprintln!("warning: {w}");
            }
            let lambdas: Vec<f64> = match &lambda_sweep {
                Some(s) => s
                    .split(',')
                    .map(|v| {
                        v.trim().parse::<f64>().map_err(|e| {
                            CliError::Message(format!("bad lambda `{v}` in sweep: {e}"))
                        })
                    })
                    .collect::<Result<_, _>>()?,
                None => vec![cfg.lambda],
            };
            std::fs::create_dir_all(&out)
                .map_err(|source| CliError::Io { path: out.clone(), source })?;
            write_file(&out.join("resolved.config"), &cfg.to_file_text())?;

            let mut summary_rows: Vec<(f64, Vec<f64>)> = Vec::new();
            for &lambda in &lambdas {
                let mut primaries = Vec::new();
                for k in 0..cfg.seeds {
                    let mut run_cfg = cfg.clone();
                    run_cfg.lambda = lambda;
                    run_cfg.seed = cfg.seed + k as u64;
                    let tag = if lambdas.len() > 1 {
                        format!("lambda{lambda}_seed{}", run_cfg.seed)
                    } else {
                        format!("seed{}", run_cfg.seed)
                    };
                    let (report, primary) = train_one(&run_cfg, &dataset, &out, &tag)?;
                    println!(
                        "lambda {lambda} seed {}: {}",
                        run_cfg.seed,
                        report
                            .last_metrics()
                            .map(describe_metrics)
                            .unwrap_or_else(|| "no held-out metrics".into())
                    );
                    primaries.push(primary);
                }
                summary_rows.push((lambda, primaries));
            }

            let survival = cfg.task == data::Task::Survival;
            let metric_name = if survival { "c_index" } else { "accuracy" };
            let mut text = format!("{:<10} {:>10} {:>10}  per-seed\n", "lambda", "mean", "std");
            let mut csv = format!("lambda,mean_{metric_name},std_{metric_name},seeds\n");
            for (lambda, vals) in &summary_rows {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                let list = vals.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
                text.push_str(&format!("{lambda:<10} {mean:>10.4} {:>10.4}  {list}\n", var.sqrt()));
                csv.push_str(&format!("{lambda},{mean:.6},{:.6},{}\n", var.sqrt(), vals.len()));
            }
            write_file(&out.join("summary.txt"), &text)?;
            write_file(&out.join("summary.csv"), &csv)?;
            print!("{text}");
            Ok(0)
        }
        Command::Eval { flags, checkpoint, data: manifest, split } => {
            let cfg = flags.resolve()?;
            let dataset = data::load_manifest(&manifest)?;
            let bags = dataset.split(&split);
            if bags.is_empty() {
                return Err(CliError::Message(format!("split `{split}` is empty")));
            }
            let metrics = match cfg.precision {
                Precision::F32 => eval_checkpoint::<f32>(&cfg, &checkpoint, bags)?,
                Precision::F64 => eval_checkpoint::<f64>(&cfg, &checkpoint, bags)?,
            };
            println!("{}", metrics_lines(&metrics, &split));
            Ok(0)
        }
        Command::Verify => {
            let reports = verify::run_all(&VerifyOptions::default());
            print!("{}", verify::render_table(&reports));
            if verify::all_passed(&reports) {
                println!("all property groups passed");
                Ok(0)
            } else {
                let failed: Vec<&str> =
                    reports.iter().filter(|r| !r.passed).map(|r| r.group).collect();
                eprintln!("failed groups: {}", failed.join(", "));
                Ok(2)
            }
        }
        Command::OtCheck => {
            let opts = VerifyOptions::default();
            let reports = verify::run_all(&opts);
            let transport: Vec<_> = reports
                .into_iter()
                .filter(|r| matches!(r.group, "matrix_form" | "transport_check"))
                .collect();
            print!("{}", verify::render_table(&transport));
            Ok(if verify::all_passed(&transport) { 0 } else { 2 })
        }
        Command::EntropyDemo { table } => {
            let joints: Vec<(String, DiscreteJoint)> = match table {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|source| CliError::Io { path: path.clone(), source })?;
                    vec![(path.display().to_string(), parse_joint_table(&text)?)]
                }
                None => builtin_joints(),
            };
            for (name, joint) in joints {
                println!("table: {name} (alphabet sizes {:?})", joint.dims());
                match joint.dims().len() {
                    3 => {
                        let pi = info::positional_information(&joint)?;
                        println!("  H(Y|X)   = {:.6} bits", pi.h_y_given_x);
                        println!("  H(Y|X,P) = {:.6} bits", pi.h_y_given_xp);
                        println!("  I(Y;P|X) = {:.6} bits (nonnegative)", pi.cmi);
                    }
                    2 => {
                        let r = info::half_entropy_bound(&joint)?;
                        println!("  bayes error  = {:.6}", r.bayes_error);
                        println!("  H(Y|X) / 2   = {:.6} bits", r.bound);
                        println!("  bound holds  = {}", r.holds);
                    }
                    other => {
                        return Err(CliError::Message(format!(
                            "expected a rank-2 or rank-3 table, got rank {other}"
                        )))
                    }
                }
            }
            Ok(0)
        }
        Command::Cam { flags, checkpoint, bag, class, out, pgm } => {
            let cfg = flags.resolve()?;
            let bag = data::read_bag(&bag)?;
            std::fs::create_dir_all(&out)
                .map_err(|source| CliError::Io { path: out.clone(), source })?;
            let result = match cfg.precision {
                Precision::F32 => cam_for_bag::<f32>(&cfg, &checkpoint, &bag, class)?,
                Precision::F64 => cam_for_bag::<f64>(&cfg, &checkpoint, &bag, class)?,
            };
            let lines = interpret::export_lines(&result, bag.coords.as_deref());
            write_file(&out.join("cam.csv"), &lines)?;
            if pgm {
                interpret::export_pgm(&result, &out.join("cam.pgm"))?;
            }
            println!(
                "wrote {} instance scores (grid {}x{}, class {}) to {}",
                result.real_instances,
                result.grid_side,
                result.grid_side,
                result.class,
                out.display()
            );
            if let Some(labels) = &bag.instance_labels {
                match interpret::cam_localization_auc(&result, labels) {
                    Ok(auc) => println!("localization auc vs ground truth: {auc:.4}"),
                    Err(e) => println!("localization auc unavailable: {e}"),
                }
            }
            Ok(0)
        }
    }
}

/// Train one seed, write its checkpoint and report, return the headline
/// metric.
fn train_one(
    cfg: &RunConfig,
    dataset: &Dataset,
    out: &Path,
    tag: &str,
) -> Result<(TrainReport, f64), CliError> {
    let train_bags = dataset.split("train");
    let test_bags = dataset.split("test");
    if train_bags.is_empty() {
        return Err(CliError::Message(
            "manifest has no `train` split; synthesize one with the synth subcommand".into(),
        ));
    }
    let report = match cfg.precision {
        Precision::F32 => {
            let (model, report) = train::train::<f32>(
                &cfg.model_config(),
                train_bags,
                test_bags,
                &cfg.train_settings(),
            )?;
            save_params(&model.params, &out.join(format!("{tag}.jmwt")))?;
            report
        }
        Precision::F64 => {
            let (model, report) = train::train::<f64>(
                &cfg.model_config(),
                train_bags,
                test_bags,
                &cfg.train_settings(),
            )?;
            save_params(&model.params, &out.join(format!("{tag}.jmwt")))?;
            report
        }
    };
    write_file(&out.join(format!("{tag}.csv")), &report.to_lines())?;
    let primary = report.last_metrics().map(|m| m.primary()).unwrap_or(f64::NAN);
    Ok((report, primary))
}

fn eval_checkpoint<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    bags: &[Bag],
) -> Result<EvalMetrics, CliError> {
    let mut model: Model<T> = Model::init(cfg.model_config())?;
    load_params(&mut model.params, checkpoint)?;
    Ok(train::evaluate(&model, bags)?)
}

fn cam_for_bag<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    bag: &Bag,
    class: usize,
) -> Result<interpret::CamResult, CliError> {
    use jigsaw_mil::nets::forward_backbone;
    use jigsaw_mil::tensor::Tape;
    let mut model: Model<T> = Model::init(cfg.model_config())?;
    load_params(&mut model.params, checkpoint)?;
    let mut tape: Tape<T> = Tape::new();
    let binding = model.bind(&mut tape, false);
    let x = tape.leaf(bag.features.map(|v| T::from_f64(v as f64)), false);
    let (f, m, _pad) = forward_backbone(&mut tape, &binding, x)?;
    let features = tape.value(f).to_f64();
    let head_w = model.params.get("head.w").unwrap().to_f64();
    let head_b: Vec<f64> =
        model.params.get("head.b").unwrap().data().iter().map(|&v| Scalar::to_f64(v)).collect();
    Ok(interpret::cam(&features, &head_w, &head_b, class, bag.n(), m)?)
}

fn describe_metrics(m: EvalMetrics) -> String {
    match m {
        EvalMetrics::Classification(b) => format!(
            "accuracy {:.4}, f1 {:.4}, auc {}",
            b.accuracy,
            b.f1,
            b.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
        ),
        EvalMetrics::Survival { c_index } => format!("c-index {c_index:.4}"),
    }
}

fn metrics_lines(m: &EvalMetrics, split: &str) -> String {
    match m {
        EvalMetrics::Classification(b) => format!(
            "split,accuracy,f1,auc\n{split},{:.17},{:.17},{}",
            b.accuracy,
            b.f1,
            b.auc.map(|a| format!("{a:.17}")).unwrap_or_default()
        ),
        EvalMetrics::Survival { c_index } => {
            format!("split,c_index\n{split},{c_index:.17}")
        }
    }
}

/// Built-in demonstration tables.
fn builtin_joints() -> Vec<(String, DiscreteJoint)> {
    vec![
        (
            "positions duplicate the label (X pure noise)".into(),
            DiscreteJoint::new(vec![2, 2, 2], vec![0.25, 0.0, 0.0, 0.25, 0.25, 0.0, 0.0, 0.25])
                .unwrap(),
        ),
        (
            "positions conditionally independent of the label".into(),
            DiscreteJoint::new(vec![2, 2, 2], vec![0.18, 0.02, 0.18, 0.02, 0.03, 0.27, 0.03, 0.27])
                .unwrap(),
        ),
        (
            "skewed binary channel (rank 2)".into(),
            DiscreteJoint::new(vec![2, 2], vec![0.4, 0.1, 0.1, 0.4]).unwrap(),
        ),
    ]
}

/// Parse `sizes...\nprob rows...` into a joint table.
fn parse_joint_table(text: &str) -> Result<DiscreteJoint, CliError> {
    let mut lines =
        text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines.next().ok_or_else(|| CliError::Message("empty joint table".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| CliError::Message(format!("bad size `{t}`: {e}"))))
        .collect::<Result<_, _>>()?;
    let mut probs = Vec::new();
    for line in lines {
        for tok in line.split_whitespace() {
            probs.push(
                tok.parse::<f64>()
                    .map_err(|e| CliError::Message(format!("bad probability `{tok}`: {e}")))?,
            );
        }
    }
    Ok(DiscreteJoint::new(dims, probs)?)
}
