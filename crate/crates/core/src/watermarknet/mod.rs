//! Encoder f_θ(I, m) → I_w and decoder g_φ(I_w) → logits.
//!
//! Encoder: the message is spread to L constant planes, stacked with the
//! image, passed through Conv-BN-ReLU blocks, re-stacked with the image and
//! message planes, and mapped by a final 3×3 convolution and a sigmoid to the
//! watermarked image. Decoder: Conv-BN-ReLU blocks, one block with L filters,
//! global average pooling and an L×L affine layer.

mod io;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::imageops::{Image, ImageError};
use crate::msgcodec::{logits_to_message, Message, MessageError};
use crate::tensorgrad::layers::{self, StatsMode};
use crate::tensorgrad::{Bound, Graph, NodeId, ParamSet, RunningStats, Tensor, TensorError};
use crate::weights::WeightsError;

pub use io::{load_model, save_model, MAGIC};

/// Largest supported message length.
pub const MAX_MSG_LEN: usize = 256;
/// Smallest spatial size the decoder accepts.
pub const MIN_DECODE_SIZE: usize = 8;
// Keeps logit(x) finite for saturated pixels in the skip output.
const SKIP_CLAMP: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum WatermarkError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("message has {found} bits, model expects {expected}")]
    MessageLength { expected: usize, found: usize },
    #[error("image has {found} channels, model expects {expected}")]
    Channels { expected: usize, found: usize },
    #[error("image {height}x{width} is smaller than the decoder minimum {min}x{min}")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

/// How the encoder's final convolution becomes pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderOutput {
    /// `σ(conv)`.
    Sigmoid,
    /// `σ(conv + logit(I))`: starts near the identity map and learns a
    /// perturbation in logit space; still bounded to [0,1].
    SkipSigmoid,
}

impl EncoderOutput {
    pub fn name(self) -> &'static str {
        match self {
            EncoderOutput::Sigmoid => "sigmoid",
            EncoderOutput::SkipSigmoid => "skip-sigmoid",
        }
    }
}

impl fmt::Display for EncoderOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderOutput {
    type Err = WatermarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sigmoid" => Ok(EncoderOutput::Sigmoid),
            "skip-sigmoid" => Ok(EncoderOutput::SkipSigmoid),
            other => Err(WatermarkError::Config(format!("unknown encoder output {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkConfig {
    pub msg_len: usize,
    pub base_channels: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub image_channels: usize,
    pub output: EncoderOutput,
}

impl WatermarkConfig {
    pub fn new(msg_len: usize) -> Self {
        Self {
            msg_len,
            base_channels: 64,
            encoder_blocks: 4,
            decoder_blocks: 7,
            image_channels: 3,
            output: EncoderOutput::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<(), WatermarkError> {
        let fields = [
            ("msg_len", self.msg_len),
            ("base_channels", self.base_channels),
            ("encoder_blocks", self.encoder_blocks),
            ("decoder_blocks", self.decoder_blocks),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(WatermarkError::Config(format!("{name} must be positive")));
        }
        if self.msg_len > MAX_MSG_LEN {
            return Err(WatermarkError::Config(format!("msg_len {} exceeds {MAX_MSG_LEN}", self.msg_len)));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(WatermarkError::Config(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkModel {
    pub(crate) config: WatermarkConfig,
    pub(crate) encoder: ParamSet,
    pub(crate) decoder: ParamSet,
    pub(crate) enc_stats: Vec<RunningStats>,
    pub(crate) dec_stats: Vec<RunningStats>,
    pub(crate) step: u64,
}

pub fn build_model(config: WatermarkConfig, seed: u64) -> Result<WatermarkModel, WatermarkError> {
    config.validate()?;
    let (c, l, ic) = (config.base_channels, config.msg_len, config.image_channels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = ParamSet::new();
    for i in 0..config.encoder_blocks {
        let c_in = if i == 0 { ic + l } else { c };
        layers::add_conv_block(&mut encoder, &mut rng, &format!("enc.block{i}"), c_in, c)?;
    }
    layers::add_conv(&mut encoder, &mut rng, "enc.final", c + ic + l, ic, 3)?;
    let mut decoder = ParamSet::new();
    for i in 0..config.decoder_blocks {
        let c_in = if i == 0 { ic } else { c };
        layers::add_conv_block(&mut decoder, &mut rng, &format!("dec.block{i}"), c_in, c)?;
    }
    layers::add_conv_block(&mut decoder, &mut rng, "dec.msgblock", c, l)?;
    layers::add_affine(&mut decoder, &mut rng, "dec.linear", l, l)?;
    encoder.round_to_f32();
    decoder.round_to_f32();
    let mut dec_stats: Vec<RunningStats> = (0..config.decoder_blocks).map(|_| RunningStats::unit(c)).collect();
    dec_stats.push(RunningStats::unit(l));
    Ok(WatermarkModel {
        enc_stats: (0..config.encoder_blocks).map(|_| RunningStats::unit(c)).collect(),
        dec_stats,
        encoder,
        decoder,
        config,
        step: 0,
    })
}

/// Parameter nodes of both networks bound into one graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Bound,
    pub decoder: Bound,
}

impl WatermarkModel {
    pub fn config(&self) -> &WatermarkConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn encoder_params(&self) -> &ParamSet {
        &self.encoder
    }

    pub fn decoder_params(&self) -> &ParamSet {
        &self.decoder
    }

    pub fn encoder_params_mut(&mut self) -> &mut ParamSet {
        &mut self.encoder
    }

    pub fn decoder_params_mut(&mut self) -> &mut ParamSet {
        &mut self.decoder
    }

    pub fn bind(&self, graph: &mut Graph) -> Result<BoundModel, WatermarkError> {
        Ok(BoundModel {
            encoder: self.encoder.bind(graph)?,
            decoder: self.decoder.bind(graph)?,
        })
    }

    /// Encoder pass on an N×C×H×W node; `train` selects batch statistics
    /// (and updates the running ones) instead of stored statistics.
    pub fn encode_node(
        &mut self,
        graph: &mut Graph,
        bound: &BoundModel,
        images: NodeId,
        messages: &[Message],
        train: bool,
    ) -> Result<NodeId, WatermarkError> {
        let stats = if train {
            StatsMode::Train(&mut self.enc_stats)
        } else {
            StatsMode::Infer(&self.enc_stats)
        };
        encoder_forward(&self.config, graph, &bound.encoder, images, messages, stats)
    }

    /// Decoder pass returning N×L logits.
    pub fn decode_node(
        &mut self,
        graph: &mut Graph,
        bound: &BoundModel,
        images: NodeId,
        train: bool,
    ) -> Result<NodeId, WatermarkError> {
        let stats = if train {
            StatsMode::Train(&mut self.dec_stats)
        } else {
            StatsMode::Infer(&self.dec_stats)
        };
        decoder_forward(&self.config, graph, &bound.decoder, images, stats)
    }

    /// Rounds parameters and running statistics through `f32`, the stored
    /// precision.
    pub fn round_to_f32(&mut self) {
        self.encoder.round_to_f32();
        self.decoder.round_to_f32();
        for s in self.enc_stats.iter_mut().chain(self.dec_stats.iter_mut()) {
            for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }
}

fn check_channels(cfg: &WatermarkConfig, channels: usize) -> Result<(), WatermarkError> {
    if channels != cfg.image_channels {
        return Err(WatermarkError::Channels {
            expected: cfg.image_channels,
            found: channels,
        });
    }
    Ok(())
}

fn encoder_forward(
    cfg: &WatermarkConfig,
    graph: &mut Graph,
    b: &Bound,
    images: NodeId,
    messages: &[Message],
    mut stats: StatsMode<'_>,
) -> Result<NodeId, WatermarkError> {
    let [n, ch, h, w] = graph.value(images).dims4("encode")?;
    check_channels(cfg, ch)?;
    if messages.len() != n {
        return Err(WatermarkError::Config(format!("{} messages for a batch of {n}", messages.len())));
    }
    let l = cfg.msg_len;
    let plane = h * w;
    let mut planes = Vec::with_capacity(n * l * plane);
    for m in messages {
        if m.len() != l {
            return Err(WatermarkError::MessageLength {
                expected: l,
                found: m.len(),
            });
        }
        for &bit in m.bits() {
            planes.extend(std::iter::repeat_n(f64::from(bit), plane));
        }
    }
    let msg = graph.input(Tensor::new(vec![n, l, h, w], planes)?)?;

    let mut x = graph.concat_channels(images, msg)?;
    for i in 0..cfg.encoder_blocks {
        x = layers::conv_block(graph, b, &format!("enc.block{i}"), x, stats.bn(i)?)?;
    }
    let x = graph.concat_channels(x, images)?;
    let x = graph.concat_channels(x, msg)?;
    let mut out = layers::conv(graph, b, "enc.final", x)?;
    if cfg.output == EncoderOutput::SkipSigmoid {
        let logit = graph.value(images).map(|v| {
            let v = v.clamp(SKIP_CLAMP, 1.0 - SKIP_CLAMP);
            (v / (1.0 - v)).ln()
        });
        let logit = graph.input(logit)?;
        out = graph.add(out, logit)?;
    }
    Ok(graph.sigmoid(out))
}

fn decoder_forward(
    cfg: &WatermarkConfig,
    graph: &mut Graph,
    b: &Bound,
    images: NodeId,
    mut stats: StatsMode<'_>,
) -> Result<NodeId, WatermarkError> {
    let [_, ch, h, w] = graph.value(images).dims4("decode")?;
    check_channels(cfg, ch)?;
    if h < MIN_DECODE_SIZE || w < MIN_DECODE_SIZE {
        return Err(WatermarkError::TooSmall {
            height: h,
            width: w,
            min: MIN_DECODE_SIZE,
        });
    }
    let mut x = images;
    for i in 0..cfg.decoder_blocks {
        x = layers::conv_block(graph, b, &format!("dec.block{i}"), x, stats.bn(i)?)?;
    }
    x = layers::conv_block(graph, b, "dec.msgblock", x, stats.bn(cfg.decoder_blocks)?)?;
    let pooled = graph.global_avg_pool(x)?;
    Ok(layers::affine(graph, b, "dec.linear", pooled)?)
}

/// Inference-mode watermark embedding of a batch of equally sized images.
pub fn encode_batch(model: &WatermarkModel, images: &[&Image], messages: &[Message]) -> Result<Vec<Image>, WatermarkError> {
    let mut graph = Graph::new();
    let bound = model.encoder.bind(&mut graph)?;
    let x = graph.input(Image::batch_tensor(images)?)?;
    let y = encoder_forward(&model.config, &mut graph, &bound, x, messages, StatsMode::Infer(&model.enc_stats))?;
    Ok(Image::from_batch_tensor(graph.value(y))?)
}

pub fn encode(model: &WatermarkModel, img: &Image, msg: &Message) -> Result<Image, WatermarkError> {
    Ok(encode_batch(model, &[img], std::slice::from_ref(msg))?.remove(0))
}

/// Inference-mode logits for a batch of equally sized images.
pub fn decode_logits_batch(model: &WatermarkModel, images: &[&Image]) -> Result<Vec<Vec<f64>>, WatermarkError> {
    let mut graph = Graph::new();
    let bound = model.decoder.bind(&mut graph)?;
    let x = graph.input(Image::batch_tensor(images)?)?;
    let y = decoder_forward(&model.config, &mut graph, &bound, x, StatsMode::Infer(&model.dec_stats))?;
    Ok(graph.value(y).data().chunks(model.config.msg_len).map(<[f64]>::to_vec).collect())
}

pub fn decode_logits(model: &WatermarkModel, img: &Image) -> Result<Vec<f64>, WatermarkError> {
    Ok(decode_logits_batch(model, &[img])?.remove(0))
}

pub fn extract(model: &WatermarkModel, img: &Image) -> Result<Message, WatermarkError> {
    Ok(logits_to_message(&decode_logits(model, img)?)?)
}
