use std::fmt::Write as _;

use super::config::SweepSpec;
use super::train::batch_or_single;
use super::{derive_seed, PipelineError};
use crate::bioeval::mean_std;
use crate::imageops::{apply_transform, Image, Transform, TransformKind};
use crate::msgcodec::{bit_accuracy, logits_to_message, Message};
use crate::watermarknet::{decode_logits_batch, encode_batch, WatermarkModel};

pub const SWEEP_HEADER: &str = "kind,factor,mean_bit_acc,std,n";

const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: TransformKind,
    pub factor: f64,
    /// NaN when the cell failed.
    pub mean_bit_acc: f64,
    pub std: f64,
    pub n: usize,
    pub failure: Option<String>,
}

/// Embeds `msg` in every image once, then for each grid cell applies the
/// transform (`repetitions` times, with per-image seeds) and extracts.
pub fn run_sweep(
    model: &WatermarkModel,
    images: &[Image],
    msg: &Message,
    spec: &SweepSpec,
) -> Result<Vec<SweepRow>, PipelineError> {
    if images.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut marked = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let refs: Vec<&Image> = chunk.iter().collect();
        let msgs = vec![msg.clone(); refs.len()];
        marked.extend(batch_or_single(
            &refs,
            |r| encode_batch(model, r, &msgs),
            |_, img| encode_batch(model, &[img], std::slice::from_ref(msg)),
        )?);
    }

    let mut rows = Vec::new();
    let mut cell = 0u64;
    for (kind, grid) in &spec.grids {
        for &factor in grid {
            let row = match sweep_cell(model, &marked, msg, *kind, factor, spec, cell) {
                Ok(accs) => {
                    let (mean, std) = mean_std(&accs);
                    SweepRow {
                        kind: *kind,
                        factor,
                        mean_bit_acc: mean,
                        std,
                        n: accs.len(),
                        failure: None,
                    }
                }
                Err(e) => {
                    log::warn!("sweep cell {kind} {factor} failed: {e}");
                    SweepRow {
                        kind: *kind,
                        factor,
                        mean_bit_acc: f64::NAN,
                        std: f64::NAN,
                        n: 0,
                        failure: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
            cell += 1;
        }
    }
    Ok(rows)
}

fn sweep_cell(
    model: &WatermarkModel,
    marked: &[Image],
    msg: &Message,
    kind: TransformKind,
    factor: f64,
    spec: &SweepSpec,
    cell: u64,
) -> Result<Vec<f64>, PipelineError> {
    let mut accs = Vec::with_capacity(marked.len() * spec.repetitions);
    for rep in 0..spec.repetitions {
        for (start, chunk) in (0..marked.len()).step_by(CHUNK).zip(marked.chunks(CHUNK)) {
            let transformed = chunk
                .iter()
                .enumerate()
                .map(|(j, img)| {
                    let seed = derive_seed(spec.seed, &[cell, (start + j) as u64, rep as u64]);
                    apply_transform(img, &Transform::new(kind, factor, seed)?)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Image> = transformed.iter().collect();
            let logits = batch_or_single(&refs, |r| decode_logits_batch(model, r), |_, img| {
                decode_logits_batch(model, &[img])
            })?;
            for lg in &logits {
                accs.push(bit_accuracy(msg, &logits_to_message(lg)?)?);
            }
        }
    }
    Ok(accs)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{:.6},{:.6},{}", r.kind, r.factor, r.mean_bit_acc, r.std, r.n).expect("writing to a String");
    }
    out
}
