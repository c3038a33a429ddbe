//! Bag-structured learning without the permutation-invariance constraint:
//! a Siamese trainer that regularizes a spatial backbone toward shuffling
//! equivalence ("instance jigsaw puzzles"), together with executable checks
//! of the mathematics it rests on — permutation invariance and equivariance
//! of pooling aggregators, the conditional-entropy error bound, and the
//! optimal-transport reading of the equivalence loss.
//!
//! The crate is a library first. Each major capability has a runnable
//! example:
//!
//! ```text
//! cargo run --release --example synth_dataset      # generate a bag dataset
//! cargo run --release --example train_classification
//! cargo run --release --example train_survival
//! cargo run --release --example lambda_ablation    # regularizer on/off/sweep
//! cargo run --release --example invariance_suite   # aggregator (in)variance
//! cargo run --release --example ot_justification   # EMD / Sinkhorn / loss identity
//! cargo run --release --example entropy_bound      # conditional-entropy bounds
//! cargo run --release --example cam_heatmap        # per-instance evidence maps
//! cargo run --release --example branch_timing      # dual-branch step costs
//! ```
//!
//! A thin `jigsaw-mil` binary wraps the same entry points as subcommands
//! (`synth`, `train`, `eval`, `verify`, `ot-check`, `entropy-demo`, `cam`).

pub mod config;
pub mod data;
pub mod info;
pub mod interpret;
pub mod metrics;
pub mod nets;
pub mod ot;
pub mod perm;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use tensor::{Tape, Tensor};
