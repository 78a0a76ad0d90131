//! Binary PPM (P6, maxval 255).

use std::path::Path;

use super::{Image, ImageError};

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn malformed(offset: usize, reason: impl Into<String>) -> ImageError {
    ImageError::Malformed {
        offset,
        reason: reason.into(),
    }
}

/// Skips whitespace and `#` comments, returning the next token's offset.
fn skip_space(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => pos += 1,
            _ => break,
        }
    }
    pos
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize), ImageError> {
    let start = skip_space(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(malformed(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| malformed(start, format!("{what} {text} out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header, ImageError> {
    if bytes.len() < 2 {
        return Err(malformed(0, "missing magic number"));
    }
    if &bytes[..2] != b"P6" {
        return Err(malformed(
            0,
            format!("magic {:?} is not P6", String::from_utf8_lossy(&bytes[..2])),
        ));
    }
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed(pos, format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(malformed(pos, format!("maxval {maxval} is not 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(malformed(pos, "expected one whitespace byte after maxval")),
    }
    Ok(Header {
        width,
        height,
        payload_start: pos + 1,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, ImageError> {
    let header = parse_header(bytes)?;
    let plane = header.width * header.height;
    let expected = 3 * plane;
    let payload = &bytes[header.payload_start..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            offset: header.payload_start + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    let mut data = vec![0.0; expected];
    for (i, px) in payload[..expected].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Ok(Image::from_parts(3, header.height, header.width, data))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes as P6; single-channel images are replicated into RGB.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    let plane = h * w;
    for i in 0..plane {
        for c in 0..3 {
            let src = if img.channels() == 3 { c } else { 0 };
            out.push(quantize(img.data()[src * plane + i]));
        }
    }
    out
}

pub fn load_ppm(path: &Path) -> Result<Image, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_ppm(&bytes)
}

pub fn save_ppm(img: &Image, path: &Path) -> Result<(), ImageError> {
    std::fs::write(path, encode_ppm(img)).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}
