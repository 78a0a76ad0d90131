//! Plain-text `key = value` configuration shared by every subcommand.
//!
//! Blank lines and `#` comments are ignored. Each subcommand reads the keys
//! it understands; a key no schema knows is rejected so typos surface early.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use super::PipelineError;
use crate::bioeval::EmbedderConfig;
use crate::imageops::TransformKind;
use crate::tensorgrad::AdamConfig;
use crate::watermarknet::{EncoderOutput, WatermarkConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    // watermark training
    "lambda",
    "recon_weight",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "steps",
    "image_size",
    "msg_len",
    "base_channels",
    "encoder_blocks",
    "decoder_blocks",
    "image_channels",
    "encoder_output",
    "p_aug",
    "aug_kinds",
    "crop_range",
    "resize_range",
    "brightness_range",
    "contrast_range",
    "jpeg_range",
    "seed",
    "checkpoint_interval",
    "log_interval",
    // embedder
    "embed_dim",
    "embed_channels",
    "embed_epochs",
    "embed_lr",
    "embed_batch_size",
    "embed_input_size",
    // sweep
    "sweep_repetitions",
    "sweep_crop",
    "sweep_resize",
    "sweep_brightness",
    "sweep_contrast",
    "sweep_jpeg",
    // verification
    "far_targets",
    "max_imposters",
    "pairs_per_id",
    "histogram_bins",
];

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| PipelineError::Config {
                key: format!("line {}", i + 1),
                reason: format!("expected key = value, found {raw:?}"),
            })?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                return Err(PipelineError::Config {
                    key: k.to_string(),
                    reason: "unknown key".into(),
                });
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(PipelineError::Config {
                    key: k.to_string(),
                    reason: "given twice".into(),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, PipelineError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|e: T::Err| PipelineError::Config {
                key: key.to_string(),
                reason: format!("{raw:?}: {e}"),
            }),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>, PipelineError>
    where
        T::Err: std::fmt::Display,
        T: Clone,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|e: T::Err| PipelineError::Config {
                        key: key.to_string(),
                        reason: format!("{s:?}: {e}"),
                    })
                })
                .collect(),
        }
    }

    fn range(&self, key: &str, default: (f64, f64)) -> Result<(f64, f64), PipelineError> {
        let v = self.list(key, &[default.0, default.1])?;
        match v.as_slice() {
            [lo, hi] if lo <= hi => Ok((*lo, *hi)),
            _ => Err(PipelineError::Config {
                key: key.to_string(),
                reason: "expected `lo, hi` with lo <= hi".into(),
            }),
        }
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.get("seed", 0)
    }
}

/// Factor range sampled uniformly for one augmentation kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugRange {
    pub kind: TransformKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub recon_weight: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub image_size: usize,
    pub model: WatermarkConfig,
    pub p_aug: f64,
    /// Enabled augmentation kinds with their factor ranges.
    pub augmentations: Vec<AugRange>,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 disables).
    pub checkpoint_interval: usize,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::from_map(&ConfigMap::default()).expect("defaults are valid")
    }
}

impl TrainConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, PipelineError> {
        let defaults = WatermarkConfig::new(16);
        let model = WatermarkConfig {
            msg_len: map.get("msg_len", 16)?,
            base_channels: map.get("base_channels", defaults.base_channels)?,
            encoder_blocks: map.get("encoder_blocks", defaults.encoder_blocks)?,
            decoder_blocks: map.get("decoder_blocks", defaults.decoder_blocks)?,
            image_channels: map.get("image_channels", defaults.image_channels)?,
            output: map.get("encoder_output", EncoderOutput::Sigmoid)?,
        };
        let kinds: Vec<TransformKind> = map.list(
            "aug_kinds",
            &[TransformKind::Crop, TransformKind::Resize, TransformKind::Jpeg],
        )?;
        let mut augmentations = Vec::new();
        for kind in kinds {
            let (key, default) = match kind {
                TransformKind::Crop => ("crop_range", (0.75, 1.0)),
                TransformKind::Resize => ("resize_range", (0.75, 1.0)),
                TransformKind::Brightness => ("brightness_range", (1.0, 3.5)),
                TransformKind::Contrast => ("contrast_range", (1.0, 3.5)),
                TransformKind::Jpeg => ("jpeg_range", (75.0, 100.0)),
                TransformKind::Identity => continue,
            };
            let (lo, hi) = map.range(key, default)?;
            augmentations.push(AugRange { kind, lo, hi });
        }
        let cfg = Self {
            lambda: map.get("lambda", 1.0)?,
            recon_weight: map.get("recon_weight", 1.0)?,
            adam: AdamConfig {
                lr: map.get("lr", 1e-3)?,
                beta1: map.get("beta1", 0.9)?,
                beta2: map.get("beta2", 0.999)?,
                eps: map.get("eps", 1e-8)?,
            },
            batch_size: map.get("batch_size", 16)?,
            steps: map.get("steps", 2000)?,
            image_size: map.get("image_size", 32)?,
            model,
            p_aug: map.get("p_aug", 0.5)?,
            augmentations,
            seed: map.seed()?,
            checkpoint_interval: map.get("checkpoint_interval", 0)?,
            log_interval: map.get("log_interval", 100)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |key: &str, reason: &str| {
            Err(PipelineError::Config {
                key: key.to_string(),
                reason: reason.to_string(),
            })
        };
        if !(self.lambda >= 0.0) {
            return bad("lambda", "must be >= 0");
        }
        if !(self.recon_weight >= 0.0) {
            return bad("recon_weight", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.p_aug) {
            return bad("p_aug", "must lie in [0,1]");
        }
        if !(self.adam.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.image_size < 8 {
            return bad("image_size", "must be at least 8");
        }
        if self.p_aug > 0.0 && self.augmentations.is_empty() {
            return bad("aug_kinds", "p_aug > 0 needs at least one augmentation kind");
        }
        for a in &self.augmentations {
            let key = format!("{}_range", a.kind);
            let ok = match a.kind {
                TransformKind::Crop | TransformKind::Resize => a.lo > 0.0 && a.hi <= 1.0,
                TransformKind::Brightness | TransformKind::Contrast => a.lo > 0.0,
                TransformKind::Jpeg => a.lo >= 1.0 && a.hi <= 100.0,
                TransformKind::Identity => true,
            };
            if !ok {
                return bad(&key, "outside the transform's valid factors");
            }
            if matches!(a.kind, TransformKind::Crop | TransformKind::Resize)
                && ((a.lo * self.image_size as f64).floor() as usize) < crate::watermarknet::MIN_DECODE_SIZE
            {
                return bad(&key, "smallest factor shrinks images below the decoder minimum");
            }
        }
        self.model.validate().map_err(|e| PipelineError::Config {
            key: "model".into(),
            reason: e.to_string(),
        })
    }
}

pub fn embedder_config(map: &ConfigMap) -> Result<EmbedderConfig, PipelineError> {
    let d = EmbedderConfig::default();
    Ok(EmbedderConfig {
        dim: map.get("embed_dim", d.dim)?,
        channels: map.get("embed_channels", d.channels)?,
        epochs: map.get("embed_epochs", d.epochs)?,
        lr: map.get("embed_lr", d.lr)?,
        batch_size: map.get("embed_batch_size", d.batch_size)?,
        input_size: map.get("embed_input_size", d.input_size)?,
        seed: map.seed()?,
    })
}

/// Transformation grids evaluated by a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grids: Vec<(TransformKind, Vec<f64>)>,
    pub repetitions: usize,
    pub seed: u64,
}

pub const DEFAULT_RATIO_GRID: [f64; 6] = [1.0, 0.95, 0.9, 0.85, 0.8, 0.75];
pub const DEFAULT_PHOTOMETRIC_GRID: [f64; 6] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5];
pub const DEFAULT_JPEG_GRID: [f64; 6] = [100.0, 95.0, 90.0, 85.0, 80.0, 75.0];

impl SweepSpec {
    pub fn from_map(map: &ConfigMap) -> Result<Self, PipelineError> {
        let spec = Self {
            grids: vec![
                (TransformKind::Identity, vec![1.0]),
                (TransformKind::Crop, map.list("sweep_crop", &DEFAULT_RATIO_GRID)?),
                (TransformKind::Resize, map.list("sweep_resize", &DEFAULT_RATIO_GRID)?),
                (TransformKind::Brightness, map.list("sweep_brightness", &DEFAULT_PHOTOMETRIC_GRID)?),
                (TransformKind::Contrast, map.list("sweep_contrast", &DEFAULT_PHOTOMETRIC_GRID)?),
                (TransformKind::Jpeg, map.list("sweep_jpeg", &DEFAULT_JPEG_GRID)?),
            ],
            repetitions: map.get("sweep_repetitions", 1)?,
            seed: map.seed()?,
        };
        for (kind, grid) in &spec.grids {
            for &f in grid {
                crate::imageops::Transform::new(*kind, f, 0).map_err(|e| PipelineError::Config {
                    key: format!("sweep_{kind}"),
                    reason: e.to_string(),
                })?;
            }
        }
        if spec.repetitions == 0 {
            return Err(PipelineError::Config {
                key: "sweep_repetitions".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(spec)
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self::from_map(&ConfigMap::default()).expect("defaults are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub far_targets: Vec<f64>,
    pub max_imposters: usize,
    pub pairs_per_id: Option<usize>,
    pub histogram_bins: usize,
    pub seed: u64,
}

impl VerifyConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, PipelineError> {
        let pairs: usize = map.get("pairs_per_id", 0)?;
        Ok(Self {
            far_targets: map.list("far_targets", &[0.01])?,
            max_imposters: map.get("max_imposters", 1_000_000)?,
            pairs_per_id: (pairs > 0).then_some(pairs),
            histogram_bins: map.get("histogram_bins", 20)?,
            seed: map.seed()?,
        })
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self::from_map(&ConfigMap::default()).expect("defaults are valid")
    }
}
