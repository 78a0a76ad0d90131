use std::sync::OnceLock;

use super::{Image, ImageError};

pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn scale_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    base.map(|b| ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16)
}

/// Quality-scaled (luma, chroma) quantisation tables in row-major order.
pub fn quant_tables(quality: u8) -> Result<([u16; 64], [u16; 64]), ImageError> {
    if !(1..=100).contains(&quality) {
        return Err(ImageError::Transform(format!("jpeg quality {quality} outside [1,100]")));
    }
    Ok((scale_table(&LUMA_BASE, quality), scale_table(&CHROMA_BASE, quality)))
}

// Orthonormal DCT-II basis, row k holds frequency k.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
            }
        }
        m
    })
}

// out = A · X · Bᵀ for 8×8 row-major blocks, with A/B either C or Cᵀ.
fn separable(block: &[f64; 64], transpose: bool) -> [f64; 64] {
    let c = basis();
    let coef = |i: usize, j: usize| if transpose { c[j][i] } else { c[i][j] };
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| coef(u, y) * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * coef(v, x)).sum();
        }
    }
    out
}

pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    separable(block, false)
}

pub fn idct8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    separable(coeffs, true)
}

fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    [
        y + 1.402 * (cr - 128.0),
        y - 0.344_136 * (cb - 128.0) - 0.714_136 * (cr - 128.0),
        y + 1.772 * (cb - 128.0),
    ]
}

// Quantise every 8×8 block of a 0–255 plane in place; the plane is padded to
// multiples of 8 by edge replication and the padding discarded afterwards.
fn roundtrip_plane(plane: &mut [f64], h: usize, w: usize, table: &[u16; 64]) {
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let mut block = [0.0; 64];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            for i in 0..8 {
                let y = (by + i).min(h - 1);
                for j in 0..8 {
                    let x = (bx + j).min(w - 1);
                    block[i * 8 + j] = plane[y * w + x] - 128.0;
                }
            }
            let mut coef = dct8x8(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = idct8x8(&coef);
            for i in 0..8 {
                let y = by + i;
                if y >= h {
                    break;
                }
                for j in 0..8 {
                    let x = bx + j;
                    if x < w {
                        plane[y * w + x] = rec[i * 8 + j] + 128.0;
                    }
                }
            }
        }
    }
}

/// Simulates a baseline JPEG encode/decode (4:4:4, no entropy coding).
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image, ImageError> {
    let (luma_q, chroma_q) = quant_tables(quality)?;
    let (h, w) = (img.height(), img.width());
    if h < 8 || w < 8 {
        return Err(ImageError::Transform(format!("jpeg needs at least 8x8 pixels, got {h}x{w}")));
    }
    let n = h * w;
    let data = if img.channels() == 1 {
        let mut y: Vec<f64> = img.data().iter().map(|v| v * 255.0).collect();
        roundtrip_plane(&mut y, h, w, &luma_q);
        y.into_iter().map(|v| v.clamp(0.0, 255.0) / 255.0).collect()
    } else {
        let src = img.data();
        let mut planes = vec![vec![0.0; n]; 3];
        for i in 0..n {
            let ycc = rgb_to_ycbcr(src[i] * 255.0, src[n + i] * 255.0, src[2 * n + i] * 255.0);
            for (p, v) in planes.iter_mut().zip(ycc) {
                p[i] = v;
            }
        }
        roundtrip_plane(&mut planes[0], h, w, &luma_q);
        roundtrip_plane(&mut planes[1], h, w, &chroma_q);
        roundtrip_plane(&mut planes[2], h, w, &chroma_q);
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            let rgb = ycbcr_to_rgb(planes[0][i], planes[1][i], planes[2][i]);
            for (c, v) in rgb.into_iter().enumerate() {
                out[c * n + i] = v.clamp(0.0, 255.0) / 255.0;
            }
        }
        out
    };
    Ok(Image::from_parts(img.channels(), h, w, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mse(a: &Image, b: &Image) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64
    }

    #[test]
    fn tables_match_scaling_rule() {
        let (l50, c50) = quant_tables(50).unwrap();
        assert_eq!(l50, LUMA_BASE);
        assert_eq!(c50, CHROMA_BASE);
        let (l100, c100) = quant_tables(100).unwrap();
        assert!(l100.iter().chain(&c100).all(|&v| v == 1));
        // q=75 → scale 50 → ⌊(16·50+50)/100⌋ = 8.
        assert_eq!(quant_tables(75).unwrap().0[0], 8);
        // q=10 → scale 500 → 16·5 = 80; 99·5 clamps to 255.
        let (l10, c10) = quant_tables(10).unwrap();
        assert_eq!(l10[0], 80);
        assert_eq!(c10[63], 255);
        assert_eq!(quant_tables(1).unwrap().0[0], 255);
        assert!(quant_tables(0).is_err());
        assert!(quant_tables(101).is_err());
    }

    #[test]
    fn dct_of_constant_block_is_dc_only() {
        let block = [3.0; 64];
        let c = dct8x8(&block);
        assert!((c[0] - 24.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mid_gray_is_exact_at_every_quality() {
        let gray = Image::filled(3, 13, 21, 128.0 / 255.0).unwrap();
        for q in 1..=100 {
            assert_eq!(jpeg_roundtrip(&gray, q).unwrap(), gray, "quality {q}");
        }
    }

    #[test]
    fn rejects_tiny_images() {
        let img = Image::filled(3, 7, 20, 0.5).unwrap();
        assert!(jpeg_roundtrip(&img, 90).is_err());
    }

    #[test]
    fn error_can_grow_with_quality_on_a_noise_block() {
        // Quantisation error per coefficient is not monotone in the step size,
        // so a single block of noise can get slightly worse from q75 to q80.
        // The property only holds in aggregate on natural content.
        let data: Vec<f64> = (0..64u64).map(|i| ((i * 37 + 11) % 64) as f64 / 63.0).collect();
        let img = Image::new(1, 8, 8, data).unwrap();
        let errs: Vec<f64> = (75..=100).map(|q| mse(&img, &jpeg_roundtrip(&img, q).unwrap())).collect();
        assert!(errs.windows(2).any(|w| w[1] > w[0] + 1e-6), "{errs:?}");
    }

    // Sums of random gratings: smooth, natural-looking content.
    fn natural_strategy() -> impl Strategy<Value = Image> {
        (16usize..40, 16usize..40, proptest::collection::vec((0.05f64..0.6, 0.0f64..3.2, 0.0f64..6.3, -0.25f64..0.25), 3 * 3), 0.2f64..0.8)
            .prop_map(|(h, w, waves, base)| {
                let mut data = Vec::with_capacity(3 * h * w);
                for c in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            let v: f64 = waves[c * 3..c * 3 + 3]
                                .iter()
                                .map(|&(f, th, ph, a)| a * (f * (x as f64 * th.cos() + y as f64 * th.sin()) + ph).sin())
                                .sum();
                            data.push((base + v).clamp(0.0, 1.0));
                        }
                    }
                }
                Image::new(3, h, w, data).unwrap()
            })
    }

    fn image_strategy() -> impl Strategy<Value = Image> {
        (1usize..=3, 8usize..20, 8usize..20).prop_flat_map(|(c, h, w)| {
            let c = if c == 2 { 3 } else { c };
            proptest::collection::vec(0.0f64..=1.0, c * h * w)
                .prop_map(move |d| Image::new(c, h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dct_is_orthonormal(block in proptest::array::uniform32(-300.0f64..300.0)
            .prop_flat_map(|a| proptest::array::uniform32(-300.0f64..300.0).prop_map(move |b| (a, b)))) {
            let mut x = [0.0; 64];
            x[..32].copy_from_slice(&block.0);
            x[32..].copy_from_slice(&block.1);
            let y = idct8x8(&dct8x8(&x));
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn output_stays_in_range(img in image_strategy(), q in 1u8..=100) {
            let out = jpeg_roundtrip(&img, q).unwrap();
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn error_does_not_grow_with_quality(img in natural_strategy()) {
            let errs: Vec<f64> = [75u8, 80, 85, 90, 95, 100]
                .iter()
                .map(|&q| mse(&img, &jpeg_roundtrip(&img, q).unwrap()))
                .collect();
            for pair in errs.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-6, "{:?}", errs);
            }
        }
    }
}
