use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BioError, Embedding, SourceTag};
use crate::imageops::{resize_to, Image};
use crate::tensorgrad::layers::{self, StatsMode};
use crate::tensorgrad::{AdamConfig, Bound, Graph, NodeId, ParamSet, RunningStats, Tensor};
use crate::weights::Container;

const MAGIC: &[u8; 4] = b"EMB1";
const BLOCKS: usize = 3;
const INFER_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderConfig {
    /// Embedding width d.
    pub dim: usize,
    pub channels: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Images are resized to this square size before embedding.
    pub input_size: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            channels: 16,
            epochs: 10,
            lr: 1e-3,
            batch_size: 16,
            input_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Image,
    pub identity: String,
}

/// Three Conv-BN-ReLU blocks, global average pooling, an affine layer to the
/// embedding and an affine classifier head over the training identities.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderModel {
    dim: usize,
    channels: usize,
    image_channels: usize,
    input_size: usize,
    classes: Vec<String>,
    params: ParamSet,
    stats: Vec<RunningStats>,
}

#[derive(Debug, Clone)]
pub struct TrainedEmbedder {
    pub model: EmbedderModel,
    /// Mean cross-entropy of the untrained model, then one entry per epoch.
    pub loss_history: Vec<f64>,
}

/// Anything that maps images to fixed-width feature vectors.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>, BioError>;
}

impl EmbedderModel {
    fn build(
        dim: usize,
        channels: usize,
        image_channels: usize,
        input_size: usize,
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self, BioError> {
        if dim == 0 || channels == 0 || input_size == 0 {
            return Err(BioError::InvalidArgument("embedder sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for i in 0..BLOCKS {
            let c_in = if i == 0 { image_channels } else { channels };
            layers::add_conv_block(&mut params, &mut rng, &format!("block{i}"), c_in, channels)?;
        }
        layers::add_affine(&mut params, &mut rng, "embed", channels, dim)?;
        layers::add_affine(&mut params, &mut rng, "classify", dim, classes.len())?;
        Ok(Self {
            dim,
            channels,
            image_channels,
            input_size,
            classes,
            params,
            stats: (0..BLOCKS).map(|_| RunningStats::unit(channels)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    // Returns (embedding, class logits).
    fn forward(
        params: &ParamSet,
        graph: &mut Graph,
        x: NodeId,
        mut stats: StatsMode<'_>,
    ) -> Result<(NodeId, NodeId, Bound), BioError> {
        let bound = params.bind(graph)?;
        let mut h = x;
        for i in 0..BLOCKS {
            h = layers::conv_block(graph, &bound, &format!("block{i}"), h, stats.bn(i)?)?;
        }
        let pooled = graph.global_avg_pool(h)?;
        let z = layers::affine(graph, &bound, "embed", pooled)?;
        let logits = layers::affine(graph, &bound, "classify", z)?;
        Ok((z, logits, bound))
    }

    fn prepare(&self, img: &Image) -> Result<Image, BioError> {
        if img.channels() != self.image_channels {
            return Err(BioError::InvalidArgument(format!(
                "embedder expects {} channels, image has {}",
                self.image_channels,
                img.channels()
            )));
        }
        Ok(resize_to(img, self.input_size, self.input_size)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BioError> {
        let mut c = Container::new();
        c.set("dim", self.dim);
        c.set("channels", self.channels);
        c.set("image_channels", self.image_channels);
        c.set("input_size", self.input_size);
        c.set("classes", self.classes.join(","));
        c.set("step", self.params.step());
        for (name, p) in self.params.iter() {
            c.push(name, p.value.clone());
        }
        for (i, s) in self.stats.iter().enumerate() {
            c.push(format!("block{i}.bn.running_mean"), Tensor::new(vec![s.mean.len()], s.mean.clone())?);
            c.push(format!("block{i}.bn.running_var"), Tensor::new(vec![s.var.len()], s.var.clone())?);
        }
        Ok(c.save(path, MAGIC)?)
    }

    pub fn load(path: &Path) -> Result<Self, BioError> {
        let mut c = Container::load(path, MAGIC)?;
        let classes: String = c.field("classes")?;
        let classes: Vec<String> = classes.split(',').map(str::to_string).collect();
        let mut model = Self::build(
            c.field("dim")?,
            c.field("channels")?,
            c.field("image_channels")?,
            c.field("input_size")?,
            classes,
            0,
        )?;
        model.params.set_step(c.field("step")?);
        let mut idx = 0;
        let names: Vec<(String, Vec<usize>)> =
            model.params.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect();
        for (name, shape) in names {
            *model.params.get_mut(&name)? = c.take(&mut idx, &name, &shape)?;
        }
        for i in 0..BLOCKS {
            let ch = model.channels;
            model.stats[i].mean = c.take(&mut idx, &format!("block{i}.bn.running_mean"), &[ch])?.into_data();
            model.stats[i].var = c.take(&mut idx, &format!("block{i}.bn.running_var"), &[ch])?.into_data();
        }
        if idx != c.tensors.len() {
            return Err(BioError::InvalidArgument(format!("{} unexpected tensors in embedder file", c.tensors.len() - idx)));
        }
        Ok(model)
    }
}

impl EmbeddingProvider for EmbedderModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>, BioError> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let prepared = chunk.iter().map(|img| self.prepare(img)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Image> = prepared.iter().collect();
            let mut graph = Graph::new();
            let x = graph.input(Image::batch_tensor(&refs)?)?;
            let (z, _, _) = Self::forward(&self.params, &mut graph, x, StatsMode::Infer(&self.stats))?;
            out.extend(graph.value(z).data().chunks(self.dim).map(|r| r.iter().map(|&v| v as f32).collect()));
        }
        Ok(out)
    }
}

/// Trains the classifier with softmax cross-entropy and Adam.
pub fn train_embedder(data: &[LabeledImage], cfg: &EmbedderConfig) -> Result<TrainedEmbedder, BioError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for item in data {
        if item.identity.is_empty() {
            return Err(BioError::InvalidArgument("image without identity label".into()));
        }
        *counts.entry(item.identity.as_str()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(BioError::InvalidArgument(format!("need at least 2 identities, found {}", counts.len())));
    }
    if let Some((id, _)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(BioError::InvalidArgument(format!("identity {id:?} has fewer than 2 images")));
    }
    if cfg.batch_size == 0 {
        return Err(BioError::InvalidArgument("batch size must be positive".into()));
    }
    let classes: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
    let image_channels = data[0].image.channels();
    let mut model = EmbedderModel::build(cfg.dim, cfg.channels, image_channels, cfg.input_size, classes, cfg.seed)?;
    let images = data.iter().map(|d| model.prepare(&d.image)).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = data
        .iter()
        .map(|d| model.classes.binary_search(&d.identity).expect("label collected above"))
        .collect();

    let batch_loss = |model: &mut EmbedderModel, idx: &[usize], train: bool| -> Result<f64, BioError> {
        let refs: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut graph = Graph::new();
        let x = graph.input(Image::batch_tensor(&refs)?)?;
        let mut scratch;
        let stats = if train {
            &mut model.stats
        } else {
            scratch = model.stats.clone();
            &mut scratch
        };
        let (_, logits, bound) = EmbedderModel::forward(&model.params, &mut graph, x, StatsMode::Train(stats))?;
        let loss = graph.softmax_cross_entropy(logits, &y)?;
        let value = graph.value(loss).item();
        if train {
            graph.backward(loss)?;
            model.params.collect_grads(&graph, &bound);
        }
        Ok(value)
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let initial: f64 = order
        .chunks(cfg.batch_size)
        .map(|b| batch_loss(&mut model, b, false).map(|l| l * b.len() as f64))
        .sum::<Result<f64, _>>()?;
    history.push(initial / data.len() as f64);

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e4b3);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for b in order.chunks(cfg.batch_size) {
            total += batch_loss(&mut model, b, true)? * b.len() as f64;
            model.params.adam_step(&adam)?;
        }
        let mean = total / data.len() as f64;
        log::info!("embedder epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    model.params.round_to_f32();
    for s in &mut model.stats {
        for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
            *v = f64::from(*v as f32);
        }
    }
    Ok(TrainedEmbedder {
        model,
        loss_history: history,
    })
}

/// Embeds every image with its identity and source tag, in input order.
pub fn embed_images<P: EmbeddingProvider>(
    provider: &P,
    items: &[(&Image, &str, SourceTag)],
) -> Result<Vec<Embedding>, BioError> {
    if let Some((_, _, _)) = items.iter().find(|(_, id, _)| id.is_empty()) {
        return Err(BioError::InvalidArgument("image without identity label".into()));
    }
    let images: Vec<&Image> = items.iter().map(|(img, _, _)| *img).collect();
    let vectors = provider.embed(&images)?;
    items
        .iter()
        .zip(vectors)
        .map(|((_, id, src), v)| Embedding::new(*id, *src, v))
        .collect()
}

/// One line per embedding: `identity,source_tag,v1 v2 … vd`, each value
/// printed with 9 significant digits (exact for `f32`).
pub fn write_embeddings(path: &Path, embeddings: &[Embedding]) -> Result<(), BioError> {
    let mut out = String::new();
    for e in embeddings {
        let values: Vec<String> = e.vector.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(out, "{},{},{}", e.identity, e.source, values.join(" ")).expect("writing to a String");
    }
    std::fs::write(path, out).map_err(|source| BioError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Embedding>, BioError> {
    let text = std::fs::read_to_string(path).map_err(|source| BioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| BioError::Parse { line: line_no, reason };
        let mut parts = line.splitn(3, ',');
        let (Some(id), Some(src), Some(values)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected identity,source_tag,values".into()));
        };
        if id.is_empty() {
            return Err(err("missing identity".into()));
        }
        let src: SourceTag = src.parse().map_err(|e: BioError| err(e.to_string()))?;
        let vector = values
            .split_whitespace()
            .map(|v| v.parse::<f32>().map_err(|e| err(format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Embedding::new(id, src, vector).map_err(|e| err(e.to_string()))?);
    }
    if let Some(d) = out.first().map(|e| e.vector.len()) {
        if let Some(bad) = out.iter().position(|e| e.vector.len() != d) {
            return Err(BioError::DimensionMismatch(d, out[bad].vector.len()));
        }
    }
    Ok(out)
}
