//! Procedural images: grating textures for watermark training and synthetic
//! "identities" for the verification harness.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::imageops::Image;

/// Knobs of the grating texture generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureParams {
    pub gratings: usize,
    /// Peak amplitude of each grating's colour offset.
    pub amplitude: f64,
    /// Spatial frequency range in radians per pixel.
    pub min_freq: f64,
    pub max_freq: f64,
    /// Standard deviation of additive per-pixel noise.
    pub noise: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            gratings: 4,
            amplitude: 0.25,
            min_freq: 0.05,
            max_freq: 0.45,
            noise: 0.01,
        }
    }
}

struct Grating {
    freq: f64,
    cos: f64,
    sin: f64,
    phase: f64,
    colour: [f64; 3],
}

impl Grating {
    fn random<R: Rng>(rng: &mut R, p: &TextureParams) -> Self {
        let theta = rng.gen_range(0.0..PI);
        Self {
            freq: rng.gen_range(p.min_freq..=p.max_freq),
            cos: theta.cos(),
            sin: theta.sin(),
            phase: rng.gen_range(0.0..2.0 * PI),
            colour: [0; 3].map(|_| rng.gen_range(-1.0..1.0) * p.amplitude),
        }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        (self.freq * (x * self.cos + y * self.sin) + self.phase).sin()
    }
}

fn render<R: Rng>(rng: &mut R, size: usize, base: [f64; 3], gratings: &[Grating], noise: f64) -> Image {
    let mut data = Vec::with_capacity(3 * size * size);
    for (c, b) in base.iter().enumerate() {
        for y in 0..size {
            for x in 0..size {
                let v: f64 = gratings.iter().map(|g| g.colour[c] * g.at(y as f64, x as f64)).sum();
                let n = if noise > 0.0 { noise * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                data.push((b + v + n).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(3, size, size, data).expect("values clamped into range")
}

/// `count` square RGB textures: a random base colour plus sinusoidal gratings
/// of random frequency, orientation, phase and colour, plus pixel noise.
pub fn textures(count: usize, size: usize, seed: u64, params: &TextureParams) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base = [0; 3].map(|_| 0.2 + 0.6 * rng.gen::<f64>());
            let gratings: Vec<Grating> = (0..params.gratings).map(|_| Grating::random(&mut rng, params)).collect();
            render(&mut rng, size, base, &gratings, params.noise)
        })
        .collect()
}

/// A labelled synthetic face-like set: each identity owns a base colour and
/// grating set; its images perturb phases and colours slightly and add noise,
/// so identities are separable but not trivially so.
pub fn identities(ids: usize, per_id: usize, size: usize, seed: u64) -> Vec<(String, Image)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = TextureParams::default();
    let mut out = Vec::with_capacity(ids * per_id);
    for id in 0..ids {
        let base = [0; 3].map(|_| 0.25 + 0.5 * rng.gen::<f64>());
        let gratings: Vec<Grating> = (0..params.gratings).map(|_| Grating::random(&mut rng, &params)).collect();
        for _ in 0..per_id {
            let jittered: Vec<Grating> = gratings
                .iter()
                .map(|g| Grating {
                    phase: g.phase + 0.6 * rng.sample::<f64, _>(StandardNormal),
                    colour: g.colour.map(|c| c * (1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal))),
                    ..*g
                })
                .collect();
            let b = base.map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal));
            out.push((format!("id{id:03}"), render(&mut rng, size, b, &jittered, 0.03)));
        }
    }
    out
}
