//! `facemark` subcommands. Every subcommand accepts `--config <path>` and
//! `--seed <n>` (overrides the config's `seed`). Exit codes: 0 success,
//! 1 usage or configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{embedder_config, ConfigMap, SweepSpec, TrainConfig, VerifyConfig};
use super::dataset::watermark_dataset;
use super::manifest::{Manifest, ManifestEntry};
use super::sweep::{run_sweep, sweep_csv};
use super::synth::{identities, textures, TextureParams};
use super::train::{history_csv, train_watermark};
use super::verify::{format_reports, run_verification};
use super::PipelineError;
use crate::bioeval::{
    embed_images, pair_scores, read_embeddings, train_embedder, write_embeddings, EmbedderModel, LabeledImage,
    PairConfig, PairingMode, SourceTag,
};
use crate::imageops::{load_ppm, save_ppm, Image};
use crate::msgcodec::{bitmap_to_message, random_message, Message, SignatureBitmap};
use crate::watermarknet::{extract, load_model, save_model, WatermarkModel};

#[derive(Debug, Parser)]
#[command(name = "facemark", version, about = "Invisible watermarks for face images and their effect on verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MessageArgs {
    /// Watermark message as a 0/1 string.
    #[arg(long, conflicts_with = "bitmap")]
    pub message: Option<String>,
    /// Signature bitmap file (rows of 0/1); defaults to a seeded random message.
    #[arg(long, value_name = "PATH")]
    pub bitmap: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the watermark encoder/decoder on the images of a manifest.
    TrainWm {
        #[command(flatten)]
        common: Common,
        manifest: PathBuf,
        /// Output weights (WMF1).
        model: PathBuf,
        /// Per-step history CSV.
        #[arg(long, value_name = "PATH")]
        history: Option<PathBuf>,
    },
    /// Train the toy face embedder on a labelled manifest.
    TrainEmbedder {
        #[command(flatten)]
        common: Common,
        manifest: PathBuf,
        /// Output weights (EMB1).
        model: PathBuf,
        /// Per-epoch mean loss, one value per line.
        #[arg(long, value_name = "PATH")]
        history: Option<PathBuf>,
    },
    /// Embed the images of one or more manifests.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Output embeddings file.
        output: PathBuf,
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Print the bit string decoded from an image.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        image: PathBuf,
    },
    /// Watermark every image of a manifest with one fixed message.
    WatermarkDataset {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        message: MessageArgs,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        manifest: PathBuf,
        out_dir: PathBuf,
    },
    /// Bit accuracy under the transformation grids, as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        message: MessageArgs,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        manifest: PathBuf,
        output: PathBuf,
    },
    /// Verification reports (TAR@FAR, EER, t-test) from an embeddings file.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated pairing modes (default: all three).
        #[arg(long, value_delimiter = ',')]
        modes: Vec<PairingMode>,
        /// Skip the t-test against the original-original genuine scores.
        #[arg(long)]
        no_baseline: bool,
        embeddings: PathBuf,
        output: PathBuf,
    },
    /// Write procedural images and a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Labelled identities instead of unlabelled textures.
        #[arg(long)]
        identities: Option<usize>,
        /// Images per identity, or texture count without --identities.
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        out_dir: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl From<crate::bioeval::BioError> for CliError {
    fn from(e: crate::bioeval::BioError) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<crate::watermarknet::WatermarkError> for CliError {
    fn from(e: crate::watermarknet::WatermarkError) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<crate::imageops::ImageError> for CliError {
    fn from(e: crate::imageops::ImageError) -> Self {
        Self::Runtime(e.into())
    }
}

/// Parses `argv` (including the program name) and runs it.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn config(common: &Common) -> Result<ConfigMap, CliError> {
    let mut map = match &common.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Usage(format!("config file {} not found", path.display())));
            }
            ConfigMap::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => ConfigMap::default(),
    };
    if let Some(seed) = common.seed {
        map.set("seed", seed);
    }
    Ok(map)
}

fn usage(e: PipelineError) -> CliError {
    CliError::Usage(e.to_string())
}

fn load_manifest_images(path: &Path) -> Result<(Manifest, Vec<Image>), CliError> {
    let manifest = Manifest::load(path)?;
    let images = manifest
        .entries
        .iter()
        .map(|e| load_ppm(&manifest.resolve(e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, images))
}

fn message_for(args: &MessageArgs, model: &WatermarkModel, seed: u64) -> Result<Message, CliError> {
    let msg = if let Some(bits) = &args.message {
        bits.parse().map_err(|e| CliError::Usage(format!("--message: {e}")))?
    } else if let Some(path) = &args.bitmap {
        bitmap_to_message(&SignatureBitmap::load(path).map_err(|e| CliError::Usage(format!("--bitmap: {e}")))?)
    } else {
        random_message(seed, model.config().msg_len).map_err(|e| CliError::Runtime(e.into()))?
    };
    if msg.len() != model.config().msg_len {
        return Err(CliError::Usage(format!(
            "message has {} bits but the model embeds {}",
            msg.len(),
            model.config().msg_len
        )));
    }
    Ok(msg)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e).into())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::TrainWm {
            common,
            manifest,
            model,
            history,
        } => {
            let cfg = TrainConfig::from_map(&config(&common)?).map_err(usage)?;
            let (_, images) = load_manifest_images(&manifest)?;
            let outcome = train_watermark(&cfg, &images, Some(&model))?;
            save_model(&outcome.model, &model)?;
            if let Some(h) = history {
                write(&h, &history_csv(&outcome.history))?;
            }
            if let Some(last) = outcome.history.last() {
                log::info!("final step: bit accuracy {:.4}, PSNR {:.2} dB", last.bit_acc, last.psnr);
            }
        }
        Command::TrainEmbedder {
            common,
            manifest,
            model,
            history,
        } => {
            let cfg = embedder_config(&config(&common)?).map_err(usage)?;
            let (m, images) = load_manifest_images(&manifest)?;
            let data: Vec<LabeledImage> = m
                .entries
                .iter()
                .zip(images)
                .map(|(e, image)| LabeledImage {
                    image,
                    identity: e.identity.clone(),
                })
                .collect();
            let trained = train_embedder(&data, &cfg)?;
            trained.model.save(&model)?;
            if let Some(h) = history {
                let text: String = trained.loss_history.iter().map(|l| format!("{l:.9e}\n")).collect();
                write(&h, &text)?;
            }
        }
        Command::Embed {
            common,
            model,
            output,
            manifests,
        } => {
            config(&common)?;
            let embedder = EmbedderModel::load(&model)?;
            let mut all = Vec::new();
            for path in &manifests {
                let (m, images) = load_manifest_images(path)?;
                let items: Vec<(&Image, &str, SourceTag)> = m
                    .entries
                    .iter()
                    .zip(&images)
                    .map(|(e, img)| (img, e.identity.as_str(), e.source))
                    .collect();
                all.extend(embed_images(&embedder, &items)?);
            }
            write_embeddings(&output, &all)?;
        }
        Command::Extract { common, model, image } => {
            config(&common)?;
            let model = load_model(&model)?;
            let msg = extract(&model, &load_ppm(&image)?)?;
            println!("{msg}");
        }
        Command::WatermarkDataset {
            common,
            message,
            model,
            manifest,
            out_dir,
        } => {
            let map = config(&common)?;
            let model = load_model(&model)?;
            let msg = message_for(&message, &model, map.seed().map_err(usage)?)?;
            let manifest = Manifest::load(&manifest)?;
            let report = watermark_dataset(&model, &manifest, &msg, &out_dir)?;
            log::info!(
                "watermarked {} images ({} skipped), mean PSNR {:.2} dB",
                report.manifest.entries.len(),
                report.failures.len(),
                report.mean_psnr
            );
        }
        Command::Sweep {
            common,
            message,
            model,
            manifest,
            output,
        } => {
            let map = config(&common)?;
            let spec = SweepSpec::from_map(&map).map_err(usage)?;
            let model = load_model(&model)?;
            let msg = message_for(&message, &model, spec.seed)?;
            let (_, images) = load_manifest_images(&manifest)?;
            let rows = run_sweep(&model, &images, &msg, &spec)?;
            write(&output, &sweep_csv(&rows))?;
        }
        Command::Verify {
            common,
            modes,
            no_baseline,
            embeddings,
            output,
        } => {
            let cfg = VerifyConfig::from_map(&config(&common)?).map_err(usage)?;
            let modes = if modes.is_empty() { PairingMode::ALL.to_vec() } else { modes };
            let emb = read_embeddings(&embeddings)?;
            let baseline = if no_baseline {
                None
            } else {
                let pc = PairConfig {
                    pairs_per_id: cfg.pairs_per_id,
                    max_imposters: cfg.max_imposters,
                    seed: cfg.seed,
                };
                match pair_scores(&emb, PairingMode::OriginalOriginal, &pc) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        log::warn!("no original-original baseline: {e}");
                        None
                    }
                }
            };
            let reports = run_verification(&emb, &modes, &cfg, baseline.as_ref())?;
            write(&output, &format_reports(&reports))?;
        }
        Command::Synth {
            common,
            identities: ids,
            count,
            size,
            out_dir,
        } => {
            let seed = config(&common)?.seed().map_err(usage)?;
            let labelled: Vec<(String, Image)> = match ids {
                Some(n) => identities(n, count, size, seed),
                None => textures(count, size, seed, &TextureParams::default())
                    .into_iter()
                    .enumerate()
                    .map(|(i, img)| (format!("tex{i:05}"), img))
                    .collect(),
            };
            std::fs::create_dir_all(&out_dir).map_err(|e| PipelineError::io(&out_dir, e))?;
            let mut manifest = Manifest {
                root: out_dir.clone(),
                entries: Vec::with_capacity(labelled.len()),
            };
            for (i, (identity, img)) in labelled.into_iter().enumerate() {
                let rel = PathBuf::from(format!("{identity}_{i:05}.ppm"));
                save_ppm(&img, &out_dir.join(&rel))?;
                manifest.entries.push(ManifestEntry {
                    path: rel,
                    identity,
                    source: SourceTag::Original,
                });
            }
            manifest.save(&out_dir.join("manifest.csv"))?;
        }
    }
    Ok(())
}
