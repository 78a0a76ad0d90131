//! Orchestration: watermark training, dataset watermarking, robustness
//! sweeps, verification experiments and the `facemark` command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod sweep;
pub mod synth;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

pub use config::{AugRange, ConfigMap, SweepSpec, TrainConfig, VerifyConfig};
pub use dataset::{watermark_dataset, DatasetReport};
pub use manifest::{Manifest, ManifestEntry};
pub use sweep::{run_sweep, sweep_csv, SweepRow, SWEEP_HEADER};
pub use train::{evaluate_watermark, history_csv, train_watermark, EvalSummary, HistoryRow, TrainOutcome};
pub use verify::{format_reports, run_verification, VerificationReport};

use crate::bioeval::BioError;
use crate::imageops::ImageError;
use crate::msgcodec::MessageError;
use crate::tensorgrad::TensorError;
use crate::watermarknet::WatermarkError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at step {step}: non-finite loss or parameters (recon {recon}, decode {decode})")]
    NonFinite { step: usize, recon: f64, decode: f64 },
    #[error("{failed} of {total} images failed (limit 10%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error(transparent)]
    Bio(#[from] BioError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// `seed ⊕ hash(parts)`, stable across platforms and runs (splitmix64).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h = splitmix(h ^ p);
    }
    seed ^ h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
