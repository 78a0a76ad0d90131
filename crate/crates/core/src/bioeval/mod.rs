//! Embedding-based verification metrics and a toy face embedder.

mod embedder;
mod scores;
mod stats;

use std::fmt;
use std::str::FromStr;

pub use embedder::{
    embed_images, read_embeddings, train_embedder, write_embeddings, EmbedderConfig, EmbedderModel, EmbeddingProvider,
    LabeledImage, TrainedEmbedder,
};
pub use scores::{eer, pair_scores, score_histogram, tar_at_far, Histogram, PairConfig, PairingMode, ScoreSet, TarAtFar};
pub use stats::{mean_std, regularized_incomplete_beta, student_t_two_sided_p, welch_t_test, WelchResult};

use crate::imageops::ImageError;
use crate::tensorgrad::TensorError;
use crate::weights::WeightsError;

#[derive(Debug, thiserror::Error)]
pub enum BioError {
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding contains a non-finite value at {0}")]
    NonFinite(usize),
    #[error("FAR target {far} needs at least {needed} imposter scores, found {found}")]
    InsufficientImposters { far: f64, needed: usize, found: usize },
    #[error("no identity has enough images for {0} pairing")]
    NoUsableIdentities(PairingMode),
    #[error("both samples have zero variance")]
    DegenerateVariance,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceTag {
    Original,
    Watermarked,
}

impl SourceTag {
    pub fn name(self) -> &'static str {
        match self {
            SourceTag::Original => "original",
            SourceTag::Watermarked => "watermarked",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceTag {
    type Err = BioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "original" => Ok(SourceTag::Original),
            "watermarked" => Ok(SourceTag::Watermarked),
            other => Err(BioError::InvalidArgument(format!("unknown source tag {other:?}"))),
        }
    }
}

/// A feature vector tagged with its subject and whether the image was
/// watermarked. Values are stored at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub identity: String,
    pub source: SourceTag,
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn new(identity: impl Into<String>, source: SourceTag, vector: Vec<f32>) -> Result<Self, BioError> {
        if vector.is_empty() {
            return Err(BioError::InvalidArgument("embedding must have at least one component".into()));
        }
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(BioError::NonFinite(i));
        }
        Ok(Self {
            identity: identity.into(),
            source,
            vector,
        })
    }
}

/// Cosine of the angle between two vectors, clamped to [−1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, BioError> {
    if a.len() != b.len() {
        return Err(BioError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(BioError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, BioError> {
    cosine(&a.vector, &b.vector)
}

/// `true` (match) iff `s ≥ τ`.
pub fn match_decision(s: f64, tau: f64) -> bool {
    s >= tau
}
