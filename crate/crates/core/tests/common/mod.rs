#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use facemark::imageops::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn facemark(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facemark"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn facemark")
}

/// Piecewise-smooth RGB scenes: shaded background, overlapping shaded
/// rectangles and discs, fine 1/f-ish texture, rounded to 8-bit levels.
pub fn natural_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = vec![[0.0f64; 3]; h * w];
    let base: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.2..0.8));
    let grad: [f64; 2] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
    for y in 0..h {
        for x in 0..w {
            let s = grad[0] * y as f64 / h as f64 + grad[1] * x as f64 / w as f64;
            px[y * w + x] = base.map(|b| b + s);
        }
    }
    for _ in 0..rng.gen_range(3..7) {
        let col: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.05..0.95));
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let (ry, rx) = (rng.gen_range(3.0..h as f64 / 2.0), rng.gen_range(3.0..w as f64 / 2.0));
        let disc = rng.gen_bool(0.5);
        let shade = rng.gen_range(-0.01..0.01);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    px[y * w + x] = col.map(|c| c + shade * (y as f64 - cy));
                }
            }
        }
    }
    // Sum of a few random sinusoids with 1/f amplitudes.
    for k in 1..=8 {
        let f = 0.1 * k as f64;
        let th = rng.gen_range(0.0..std::f64::consts::PI);
        let ph = rng.gen_range(0.0..std::f64::consts::TAU);
        let a = 0.03 / k as f64;
        for y in 0..h {
            for x in 0..w {
                let v = a * (f * (x as f64 * th.cos() + y as f64 * th.sin()) + ph).sin();
                for c in &mut px[y * w + x] {
                    *c += v;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        data.extend(px.iter().map(|p| (p[c].clamp(0.0, 1.0) * 255.0).round() / 255.0));
    }
    Image::new(3, h, w, data).unwrap()
}
