use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AugRange, TrainConfig};
use super::PipelineError;
use crate::imageops::{apply_transform, psnr, resize_to, Image, Transform, TransformKind};
use crate::msgcodec::{bit_accuracy, logits_to_message, random_message_from, Message};
use crate::tensorgrad::{Graph, NodeId, Tensor};
use crate::watermarknet::{build_model, encode_batch, decode_logits_batch, save_model, WatermarkModel};

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub total_loss: f64,
    pub recon_loss: f64,
    pub decode_loss: f64,
    pub bit_acc: f64,
    pub psnr: f64,
    /// Augmentation applied at this step, if any.
    pub augmentation: Option<(TransformKind, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: WatermarkModel,
    pub history: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str = "step,total_loss,recon_loss,decode_loss,bit_acc,psnr,augmentation";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let aug = r.augmentation.map(|(k, f)| format!("{k}:{f}")).unwrap_or_else(|| "none".into());
        writeln!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.6},{:.4},{}",
            r.step, r.total_loss, r.recon_loss, r.decode_loss, r.bit_acc, r.psnr, aug
        )
        .expect("writing to a String");
    }
    out
}

fn draw_factor<R: Rng>(rng: &mut R, a: &AugRange) -> f64 {
    let f = if a.hi > a.lo { rng.gen_range(a.lo..=a.hi) } else { a.lo };
    if a.kind == TransformKind::Jpeg {
        f.round()
    } else {
        f
    }
}

// Applies one augmentation to the watermarked batch. Crop and resize are
// differentiable graph ops; the photometric kinds and JPEG run on the values
// and pass gradients straight through.
fn augment<R: Rng>(
    graph: &mut Graph,
    y: NodeId,
    kind: TransformKind,
    factor: f64,
    rng: &mut R,
) -> Result<NodeId, PipelineError> {
    let [_, _, h, w] = graph.value(y).dims4("augment")?;
    let scaled = |len: usize| (factor * len as f64).floor() as usize;
    Ok(match kind {
        TransformKind::Identity => y,
        TransformKind::Crop => {
            let (ch, cw) = (scaled(h), scaled(w));
            let top = rng.gen_range(0..=h - ch);
            let left = rng.gen_range(0..=w - cw);
            graph.crop(y, top, left, ch, cw)?
        }
        TransformKind::Resize => graph.resize_bilinear(y, scaled(h), scaled(w))?,
        TransformKind::Brightness | TransformKind::Contrast | TransformKind::Jpeg => {
            let t = Transform::new(kind, factor, 0)?;
            let images = Image::from_batch_tensor(graph.value(y))?;
            let out = images.iter().map(|img| apply_transform(img, &t)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Image> = out.iter().collect();
            let replacement: Tensor = Image::batch_tensor(&refs)?;
            graph.straight_through(y, replacement)?
        }
    })
}

fn prepare_images(images: &[Image], cfg: &TrainConfig) -> Result<Vec<Image>, PipelineError> {
    if images.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    images
        .iter()
        .map(|img| {
            if img.channels() != cfg.model.image_channels {
                return Err(PipelineError::Watermark(crate::watermarknet::WatermarkError::Channels {
                    expected: cfg.model.image_channels,
                    found: img.channels(),
                }));
            }
            Ok(resize_to(img, cfg.image_size, cfg.image_size)?)
        })
        .collect()
}

/// Joint encoder/decoder training on `w_r·mse(I_w, I) + λ·bce(g(T(I_w)), m)`
/// where T is an optional random augmentation.
pub fn train_watermark(
    cfg: &TrainConfig,
    images: &[Image],
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let images = prepare_images(images, cfg)?;
    let mut model = build_model(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let l = cfg.model.msg_len;
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..images.len())).collect();
        let msgs: Vec<Message> = (0..cfg.batch_size).map(|_| random_message_from(&mut rng, l)).collect();
        let aug_draw: f64 = rng.gen();
        let augmentation = if aug_draw < cfg.p_aug {
            let a = cfg.augmentations[rng.gen_range(0..cfg.augmentations.len())];
            Some((a.kind, draw_factor(&mut rng, &a)))
        } else {
            None
        };

        let batch: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
        let targets: Vec<u8> = msgs.iter().flat_map(|m| m.bits().iter().copied()).collect();
        let mut graph = Graph::new();
        let bound = model.bind(&mut graph)?;
        let x = graph.input(Image::batch_tensor(&batch)?)?;
        let y = model.encode_node(&mut graph, &bound, x, &msgs, true)?;
        let recon = graph.mse_loss(y, x)?;
        let z = match augmentation {
            Some((kind, factor)) => augment(&mut graph, y, kind, factor, &mut rng)?,
            None => y,
        };
        let logits = model.decode_node(&mut graph, &bound, z, true)?;
        let decode = graph.bce_logits_loss(logits, &targets)?;
        let a = graph.scale(recon, cfg.recon_weight);
        let b = graph.scale(decode, cfg.lambda);
        let loss = graph.add(a, b)?;

        let (rv, dv, tv) = (graph.value(recon).item(), graph.value(decode).item(), graph.value(loss).item());
        if !(rv.is_finite() && dv.is_finite() && tv.is_finite()) {
            return Err(PipelineError::NonFinite {
                step,
                recon: rv,
                decode: dv,
            });
        }
        let decoded = graph.value(logits).data();
        let correct = decoded
            .iter()
            .zip(&targets)
            .filter(|(v, t)| u8::from(**v > 0.0) == **t)
            .count();
        let row = HistoryRow {
            step,
            total_loss: tv,
            recon_loss: rv,
            decode_loss: dv,
            bit_acc: correct as f64 / targets.len() as f64,
            psnr: 10.0 * (1.0 / rv).log10(),
            augmentation,
        };

        graph.backward(loss)?;
        model.encoder_params_mut().collect_grads(&graph, &bound.encoder);
        model.decoder_params_mut().collect_grads(&graph, &bound.decoder);
        model.encoder_params_mut().adam_step(&cfg.adam)?;
        model.decoder_params_mut().adam_step(&cfg.adam)?;
        model.set_step(step as u64 + 1);
        let finite = |p: &crate::tensorgrad::ParamSet| p.iter().all(|(_, v)| v.value.data().iter().all(|x| x.is_finite()));
        if !(finite(model.encoder_params()) && finite(model.decoder_params())) {
            return Err(PipelineError::NonFinite {
                step,
                recon: rv,
                decode: dv,
            });
        }

        if cfg.log_interval > 0 && (step % cfg.log_interval == 0 || step + 1 == cfg.steps) {
            log::info!(
                "step {step}: recon {rv:.5} decode {dv:.4} acc {:.3} psnr {:.2}",
                row.bit_acc,
                row.psnr
            );
        }
        history.push(row);

        if let Some(path) = checkpoint {
            if cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 {
                let mut snapshot = model.clone();
                snapshot.round_to_f32();
                save_model(&snapshot, path)?;
            }
        }
    }
    model.round_to_f32();
    Ok(TrainOutcome { model, history })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean_bit_acc: f64,
    pub mean_psnr: f64,
    pub n: usize,
}

const EVAL_CHUNK: usize = 32;

/// Embeds a fresh random message (seeded) in each image, extracts it without
/// any transformation and averages bit accuracy and PSNR(I, I_w).
pub fn evaluate_watermark(model: &WatermarkModel, images: &[Image], seed: u64) -> Result<EvalSummary, PipelineError> {
    if images.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = model.config().msg_len;
    let msgs: Vec<Message> = images.iter().map(|_| random_message_from(&mut rng, l)).collect();
    let (mut acc, mut db) = (0.0, 0.0);
    for (chunk, mchunk) in images.chunks(EVAL_CHUNK).zip(msgs.chunks(EVAL_CHUNK)) {
        let refs: Vec<&Image> = chunk.iter().collect();
        let marked = batch_or_single(&refs, |r| encode_batch(model, r, &mchunk[..r.len()]), |i, img| {
            encode_batch(model, &[img], std::slice::from_ref(&mchunk[i]))
        })?;
        let mrefs: Vec<&Image> = marked.iter().collect();
        let logits = batch_or_single(&mrefs, |r| decode_logits_batch(model, r), |_, img| decode_logits_batch(model, &[img]))?;
        for ((orig, wm), (lg, m)) in chunk.iter().zip(&marked).zip(logits.iter().zip(mchunk)) {
            acc += bit_accuracy(m, &logits_to_message(lg)?)?;
            db += psnr(orig, wm)?;
        }
    }
    Ok(EvalSummary {
        mean_bit_acc: acc / images.len() as f64,
        mean_psnr: db / images.len() as f64,
        n: images.len(),
    })
}

// Runs `batched` when all images share a shape, else `single` per image.
pub(crate) fn batch_or_single<T, E>(
    images: &[&Image],
    batched: impl FnOnce(&[&Image]) -> Result<Vec<T>, E>,
    mut single: impl FnMut(usize, &Image) -> Result<Vec<T>, E>,
) -> Result<Vec<T>, E> {
    if images.windows(2).all(|w| w[0].shape() == w[1].shape()) {
        batched(images)
    } else {
        let mut out = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            out.extend(single(i, img)?);
        }
        Ok(out)
    }
}
