use std::path::{Component, Path, PathBuf};

use super::manifest::{Manifest, ManifestEntry};
use super::PipelineError;
use crate::bioeval::SourceTag;
use crate::imageops::{decode_ppm, encode_ppm, load_ppm, psnr, Image};
use crate::msgcodec::Message;
use crate::watermarknet::{encode, WatermarkModel};

/// File name of the manifest written next to the watermarked copies.
pub const OUTPUT_MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone)]
pub struct DatasetReport {
    /// Manifest of the written copies (root = output directory).
    pub manifest: Manifest,
    /// Mean PSNR between each original and its stored (8-bit) copy.
    pub mean_psnr: f64,
    /// Inputs that could not be read or encoded, with the reason.
    pub failures: Vec<(PathBuf, String)>,
}

// Relative location of an entry under the output directory: the manifest
// path with root/prefix components dropped and a `.ppm` extension.
fn mirrored(path: &Path) -> PathBuf {
    let rel: PathBuf = path
        .components()
        .filter(|c| matches!(c, Component::Normal(_)))
        .collect();
    rel.with_extension("ppm")
}

/// Encodes every image of `manifest` with the same message `msg`, writing
/// PPM copies under `out_dir` that mirror the input tree plus a manifest
/// tagged `watermarked`. Unreadable images are skipped; more than 10%
/// failures aborts before anything is written.
pub fn watermark_dataset(
    model: &WatermarkModel,
    manifest: &Manifest,
    msg: &Message,
    out_dir: &Path,
) -> Result<DatasetReport, PipelineError> {
    if manifest.entries.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    if msg.len() != model.config().msg_len {
        return Err(crate::watermarknet::WatermarkError::MessageLength {
            expected: model.config().msg_len,
            found: msg.len(),
        }
        .into());
    }
    let mut done: Vec<(&ManifestEntry, Vec<u8>, f64)> = Vec::new();
    let mut failures = Vec::new();
    for entry in &manifest.entries {
        let path = manifest.resolve(entry);
        match encode_one(model, &path, msg) {
            Ok((bytes, db)) => done.push((entry, bytes, db)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                failures.push((path, e.to_string()));
            }
        }
    }
    let total = manifest.entries.len();
    if failures.len() * 10 > total {
        return Err(PipelineError::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }

    let mut out = Manifest {
        root: out_dir.to_path_buf(),
        entries: Vec::with_capacity(done.len()),
    };
    let mut psnr_sum = 0.0;
    for (entry, bytes, db) in &done {
        let rel = mirrored(&entry.path);
        let dest = out_dir.join(&rel);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        std::fs::write(&dest, bytes).map_err(|e| PipelineError::io(&dest, e))?;
        psnr_sum += db;
        out.entries.push(ManifestEntry {
            path: rel,
            identity: entry.identity.clone(),
            source: SourceTag::Watermarked,
        });
    }
    out.save(&out_dir.join(OUTPUT_MANIFEST))?;
    Ok(DatasetReport {
        manifest: out,
        mean_psnr: psnr_sum / done.len() as f64,
        failures,
    })
}

fn encode_one(model: &WatermarkModel, path: &Path, msg: &Message) -> Result<(Vec<u8>, f64), PipelineError> {
    let img: Image = load_ppm(path)?;
    let marked = encode(model, &img, msg)?;
    let bytes = encode_ppm(&marked);
    let stored = decode_ppm(&bytes)?;
    Ok((bytes, psnr(&img, &stored)?))
}
