//! Images and the post-watermarking transformation suite.

mod jpeg;
mod ppm;
mod transform;

pub use jpeg::{dct8x8, idct8x8, jpeg_roundtrip, quant_tables, CHROMA_BASE, LUMA_BASE};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use transform::{
    adjust_brightness, adjust_contrast, apply_transform, crop_random, crop_window, luma_mean, resize_bilinear,
    resize_to, Transform, TransformKind,
};

use crate::tensorgrad::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("malformed PPM at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("truncated PPM payload at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated { offset: usize, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("invalid transform: {0}")]
    Transform(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
}

/// C×H×W pixels in [0,1], channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels (expected 1 or 3)")));
        }
        if height == 0 || width == 0 {
            return Err(ImageError::Invalid(format!("empty image {height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(ImageError::Invalid(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImageError::Invalid(format!("pixel {i} = {} outside [0,1]", data[i])));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an image from values already known to lie in [0,1].
    pub(crate) fn from_parts(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// The image as a 1×C×H×W tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.channels, self.height, self.width], self.data.clone())
    }

    /// Stacks equally sized images into an N×C×H×W tensor.
    pub fn batch_tensor(images: &[&Image]) -> Result<Tensor, ImageError> {
        let first = images
            .first()
            .ok_or_else(|| ImageError::Invalid("empty batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if img.shape() != first.shape() {
                return Err(ImageError::ShapeMismatch(first.shape(), img.shape()));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_parts(
            vec![images.len(), first.channels, first.height, first.width],
            data,
        ))
    }

    /// Splits an N×C×H×W tensor into images, clamping values into [0,1].
    pub fn from_batch_tensor(t: &Tensor) -> Result<Vec<Image>, ImageError> {
        let [n, c, h, w] = t
            .dims4("from_batch_tensor")
            .map_err(|e| ImageError::Invalid(e.to_string()))?;
        if c != 1 && c != 3 {
            return Err(ImageError::Invalid(format!("{c} channels (expected 1 or 3)")));
        }
        t.ensure_finite("from_batch_tensor")
            .map_err(|e| ImageError::Invalid(e.to_string()))?;
        Ok((0..n)
            .map(|s| {
                let data = t.data()[s * c * h * w..(s + 1) * c * h * w]
                    .iter()
                    .map(|v| v.clamp(0.0, 1.0))
                    .collect();
                Image::from_parts(c, h, w, data)
            })
            .collect())
    }
}

/// Peak signal-to-noise ratio in dB on the [0,1] scale; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImageError> {
    if a.shape() != b.shape() {
        return Err(ImageError::ShapeMismatch(a.shape(), b.shape()));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Formats a PSNR value, printing `inf` for identical images.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}
