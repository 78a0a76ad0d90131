use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{jpeg_roundtrip, Image, ImageError};
use crate::tensorgrad::kernels;

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

fn scaled_size(len: usize, ratio: f64) -> usize {
    (ratio * len as f64).floor() as usize
}

fn check_ratio(ratio: f64) -> Result<(), ImageError> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(ImageError::Transform(format!("ratio {ratio} outside (0,1]")))
    }
}

/// Copies the `h`×`w` window with top-left corner (`top`, `left`).
pub fn crop_window(img: &Image, top: usize, left: usize, h: usize, w: usize) -> Result<Image, ImageError> {
    if h == 0 || w == 0 || top + h > img.height() || left + w > img.width() {
        return Err(ImageError::Transform(format!(
            "window {h}x{w} at ({top},{left}) exceeds {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut data = Vec::with_capacity(img.channels() * h * w);
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for y in top..top + h {
            data.extend_from_slice(&plane[y * img.width() + left..y * img.width() + left + w]);
        }
    }
    Ok(Image::from_parts(img.channels(), h, w, data))
}

/// Crops to ⌊ratio·H⌋×⌊ratio·W⌋ at an offset drawn uniformly from `seed`.
pub fn crop_random(img: &Image, ratio: f64, seed: u64) -> Result<Image, ImageError> {
    check_ratio(ratio)?;
    let (h, w) = (scaled_size(img.height(), ratio), scaled_size(img.width(), ratio));
    if h == 0 || w == 0 {
        return Err(ImageError::Transform(format!("crop ratio {ratio} leaves an empty image")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = rng.gen_range(0..=img.height() - h);
    let left = rng.gen_range(0..=img.width() - w);
    crop_window(img, top, left, h, w)
}

/// Bilinear resample to an explicit size (half-pixel centres, clamp-to-edge).
pub fn resize_to(img: &Image, h: usize, w: usize) -> Result<Image, ImageError> {
    if h == 0 || w == 0 {
        return Err(ImageError::Transform("resize to an empty image".into()));
    }
    if (h, w) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let data = kernels::resize_forward(img.data(), img.channels(), img.height(), img.width(), h, w);
    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Image::from_parts(img.channels(), h, w, data))
}

/// Bilinear downscale to ⌊ratio·H⌋×⌊ratio·W⌋.
pub fn resize_bilinear(img: &Image, ratio: f64) -> Result<Image, ImageError> {
    check_ratio(ratio)?;
    let (h, w) = (scaled_size(img.height(), ratio), scaled_size(img.width(), ratio));
    if h == 0 || w == 0 {
        return Err(ImageError::Transform(format!("resize ratio {ratio} leaves an empty image")));
    }
    resize_to(img, h, w)
}

/// `clamp(factor·p, 0, 1)` per pixel.
pub fn adjust_brightness(img: &Image, factor: f64) -> Result<Image, ImageError> {
    if !(factor > 0.0) {
        return Err(ImageError::Transform(format!("brightness factor {factor} must be positive")));
    }
    let data = img.data().iter().map(|v| (factor * v).clamp(0.0, 1.0)).collect();
    Ok(Image::from_parts(img.channels(), img.height(), img.width(), data))
}

/// Mean of the luma-weighted grayscale image (plain mean for one channel).
pub fn luma_mean(img: &Image) -> f64 {
    let n = (img.height() * img.width()) as f64;
    if img.channels() == 1 {
        return img.data().iter().sum::<f64>() / n;
    }
    LUMA_WEIGHTS
        .iter()
        .enumerate()
        .map(|(c, wt)| wt * img.plane(c).iter().sum::<f64>())
        .sum::<f64>()
        / n
}

/// `clamp(μ + factor·(p − μ), 0, 1)` with μ the global luma mean.
pub fn adjust_contrast(img: &Image, factor: f64) -> Result<Image, ImageError> {
    if !(factor > 0.0) {
        return Err(ImageError::Transform(format!("contrast factor {factor} must be positive")));
    }
    let mu = luma_mean(img);
    let data = img
        .data()
        .iter()
        .map(|v| (mu + factor * (v - mu)).clamp(0.0, 1.0))
        .collect();
    Ok(Image::from_parts(img.channels(), img.height(), img.width(), data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    Crop,
    Resize,
    Brightness,
    Contrast,
    Jpeg,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::Identity,
        TransformKind::Crop,
        TransformKind::Resize,
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Crop => "crop",
            TransformKind::Resize => "resize",
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::Jpeg => "jpeg",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| ImageError::Transform(format!("unknown transform kind {s:?}")))
    }
}

/// A validated transformation with its strength.
///
/// `factor` is the ratio for crop/resize, the multiplier for
/// brightness/contrast and the integer quality for JPEG; `seed` only affects
/// crop placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    kind: TransformKind,
    factor: f64,
    seed: u64,
}

impl Transform {
    pub fn new(kind: TransformKind, factor: f64, seed: u64) -> Result<Self, ImageError> {
        match kind {
            TransformKind::Identity => {}
            TransformKind::Crop | TransformKind::Resize => check_ratio(factor)?,
            TransformKind::Brightness | TransformKind::Contrast => {
                if !(factor > 0.0 && factor.is_finite()) {
                    return Err(ImageError::Transform(format!("{kind} factor {factor} must be positive")));
                }
            }
            TransformKind::Jpeg => {
                if factor.fract() != 0.0 || !(1.0..=100.0).contains(&factor) {
                    return Err(ImageError::Transform(format!(
                        "jpeg quality {factor} must be an integer in [1,100]"
                    )));
                }
            }
        }
        Ok(Self { kind, factor, seed })
    }

    pub fn identity() -> Self {
        Self {
            kind: TransformKind::Identity,
            factor: 1.0,
            seed: 0,
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub fn apply_transform(img: &Image, t: &Transform) -> Result<Image, ImageError> {
    match t.kind {
        TransformKind::Identity => Ok(img.clone()),
        TransformKind::Crop => crop_random(img, t.factor, t.seed),
        TransformKind::Resize => resize_bilinear(img, t.factor),
        TransformKind::Brightness => adjust_brightness(img, t.factor),
        TransformKind::Contrast => adjust_contrast(img, t.factor),
        TransformKind::Jpeg => jpeg_roundtrip(img, t.factor as u8),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn gradient_image(h: usize, w: usize) -> Image {
        let mut data = Vec::new();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(((c * 7 + y * 3 + x * 5) % 17) as f64 / 16.0);
                }
            }
        }
        Image::new(3, h, w, data).unwrap()
    }

    #[test]
    fn crop_sizes_and_identity() {
        let img = gradient_image(112, 112);
        assert_eq!(crop_random(&img, 1.0, 5).unwrap(), img);
        let out = crop_random(&img, 0.8, 5).unwrap();
        assert_eq!((out.height(), out.width()), (89, 89));
        assert_eq!(out, crop_random(&img, 0.8, 5).unwrap());
        let small = Image::filled(1, 2, 2, 0.5).unwrap();
        assert!(crop_random(&small, 0.3, 0).is_err());
        assert!(crop_random(&img, 0.0, 0).is_err());
        assert!(crop_random(&img, 1.2, 0).is_err());
    }

    #[test]
    fn crop_offsets_cover_most_positions() {
        // 20×20 at ratio 0.5 has 11×11 = 121 offsets; 1000 uniform draws miss
        // a given offset with probability (120/121)^1000 ≈ 2.5e-4, so the
        // expected coverage is ≈ 121 positions.
        let mut data = Vec::new();
        for y in 0..20 {
            for x in 0..20 {
                data.push((y * 20 + x) as f64 / 400.0);
            }
        }
        let img = Image::new(1, 20, 20, data).unwrap();
        let seen: HashSet<u64> = (0..1000u64)
            .map(|s| (crop_random(&img, 0.5, s).unwrap().pixel(0, 0, 0) * 400.0).round() as u64)
            .collect();
        assert!(seen.len() > 121 / 2, "covered {} of 121 offsets", seen.len());
    }

    #[test]
    fn resize_cases() {
        let img = gradient_image(16, 12);
        assert_eq!(resize_bilinear(&img, 1.0).unwrap(), img);
        let flat = Image::filled(3, 16, 16, 0.37).unwrap();
        let out = resize_bilinear(&flat, 0.7).unwrap();
        assert_eq!((out.height(), out.width()), (11, 11));
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        // Half-pixel centres: the single output sample sits at source (0.5, 0.5).
        let checker = Image::new(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let one = resize_bilinear(&checker, 0.5).unwrap();
        assert_eq!(one.data(), &[0.5]);
    }

    #[test]
    fn brightness_and_contrast_formulas() {
        let img = Image::new(1, 1, 2, vec![0.2, 0.5]).unwrap();
        assert_eq!(adjust_brightness(&img, 1.0).unwrap(), img);
        let b = adjust_brightness(&img, 3.0).unwrap();
        assert!((b.data()[0] - 0.6).abs() < 1e-12);
        assert_eq!(b.data()[1], 1.0);

        assert_eq!(adjust_contrast(&img, 1.0).unwrap(), img);
        let flat = Image::filled(3, 4, 4, 0.42).unwrap();
        assert_eq!(adjust_contrast(&flat, 2.5).unwrap(), flat);
        // μ = 0.5 from pixels {0.4, 0.6}; 0.6 → 0.5 + 2·0.1 = 0.7.
        let pair = Image::new(1, 1, 2, vec![0.4, 0.6]).unwrap();
        let c = adjust_contrast(&pair, 2.0).unwrap();
        assert!((c.data()[1] - 0.7).abs() < 1e-12);
        assert!((c.data()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn contrast_preserves_luma_mean_without_clamping() {
        let img = gradient_image(9, 9);
        let gentle = Image::new(3, 9, 9, img.data().iter().map(|v| 0.4 + 0.2 * v).collect()).unwrap();
        let out = adjust_contrast(&gentle, 1.5).unwrap();
        assert!((luma_mean(&out) - luma_mean(&gentle)).abs() < 1e-9);
    }

    #[test]
    fn transform_validation_and_dispatch() {
        let img = gradient_image(20, 20);
        assert_eq!(apply_transform(&img, &Transform::identity()).unwrap(), img);
        let crop = Transform::new(TransformKind::Crop, 0.95, 3).unwrap();
        let out = apply_transform(&img, &crop).unwrap();
        assert_eq!((out.height(), out.width()), (19, 19));
        assert!(Transform::new(TransformKind::Jpeg, 75.0, 0).is_ok());
        assert!(Transform::new(TransformKind::Jpeg, 0.0, 0).is_err());
        assert!(Transform::new(TransformKind::Jpeg, 75.5, 0).is_err());
        assert!(Transform::new(TransformKind::Brightness, -1.0, 0).is_err());
        assert!(Transform::new(TransformKind::Resize, 1.5, 0).is_err());
        assert_eq!("contrast".parse::<TransformKind>().unwrap(), TransformKind::Contrast);
        assert!("blur".parse::<TransformKind>().is_err());
    }
}
