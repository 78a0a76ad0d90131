//! Watermark messages: random training messages, bitmap signatures, bit
//! decisions and bit accuracy.
//!
//! Random bits come from ChaCha8 seeded with `seed_from_u64`; the same seed
//! always yields the same message.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The bundled 8×6 'S' glyph in the signature-file format.
pub const S_GLYPH: &str = include_str!("../assets/s_glyph.txt");

#[derive(Debug, thiserror::Error)]
pub enum MessageError {
    #[error("message length must be at least 1")]
    EmptyMessage,
    #[error("value {value} at position {index} is not a bit")]
    NotABit { index: usize, value: u8 },
    #[error("bitmap {height}x{width} does not hold {len} bits")]
    Dimensions { height: usize, width: usize, len: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("logit {index} is NaN")]
    NanLogit { index: usize },
    #[error("signature file: {0}")]
    Parse(String),
    #[error("signature file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A non-empty string of bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message(Vec<u8>);

impl Message {
    pub fn new(bits: Vec<u8>) -> Result<Self, MessageError> {
        if bits.is_empty() {
            return Err(MessageError::EmptyMessage);
        }
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(MessageError::NotABit { index, value });
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| 1 - b).collect())
    }

    /// Bits as 0.0/1.0.
    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Message {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .trim()
            .chars()
            .enumerate()
            .map(|(index, c)| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(MessageError::Parse(format!("character {c:?} at position {index} is not 0/1"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(bits)
    }
}

/// I.i.d. fair bits from ChaCha8 seeded with `seed`.
pub fn random_message(seed: u64, len: usize) -> Result<Message, MessageError> {
    if len == 0 {
        return Err(MessageError::EmptyMessage);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_message_from(&mut rng, len))
}

/// Draws `len` fair bits from an existing generator.
pub(crate) fn random_message_from<R: Rng>(rng: &mut R, len: usize) -> Message {
    Message((0..len).map(|_| rng.gen_range(0..2u8)).collect())
}

/// Binary pixel grid whose row-major flattening is a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureBitmap {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl SignatureBitmap {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self, MessageError> {
        if height == 0 || width == 0 || height * width != pixels.len() {
            return Err(MessageError::Dimensions {
                height,
                width,
                len: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(MessageError::NotABit { index, value });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// The bundled 8×6 'S' signature (48 bits).
    pub fn s_glyph() -> Self {
        Self::parse(S_GLYPH).expect("bundled glyph is valid")
    }

    /// Parses `"H W"` followed by `H` lines of `W` characters in {0,1}.
    pub fn parse(text: &str) -> Result<Self, MessageError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| MessageError::Parse("empty file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| MessageError::Parse(format!("bad dimension {t:?}"))))
            .collect::<Result<_, _>>()?;
        let [height, width] = dims[..] else {
            return Err(MessageError::Parse(format!("header {header:?} must be \"H W\"")));
        };
        let mut pixels = Vec::with_capacity(height * width);
        for row in 0..height {
            let line = lines
                .next()
                .ok_or_else(|| MessageError::Parse(format!("missing row {row}")))?;
            if line.chars().count() != width {
                return Err(MessageError::Parse(format!("row {row} has {} columns, expected {width}", line.chars().count())));
            }
            for c in line.chars() {
                pixels.push(match c {
                    '0' => 0,
                    '1' => 1,
                    _ => return Err(MessageError::Parse(format!("row {row}: {c:?} is not 0/1"))),
                });
            }
        }
        if lines.next().is_some() {
            return Err(MessageError::Parse(format!("more than {height} rows")));
        }
        Self::new(height, width, pixels)
    }

    pub fn load(path: &Path) -> Result<Self, MessageError> {
        let text = std::fs::read_to_string(path).map_err(|source| MessageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.height, self.width);
        for row in self.pixels.chunks(self.width) {
            out.extend(row.iter().map(|&b| if b == 1 { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }
}

/// Row-major flattening, top-left first.
pub fn bitmap_to_message(bmp: &SignatureBitmap) -> Message {
    Message(bmp.pixels.clone())
}

pub fn message_to_bitmap(msg: &Message, height: usize, width: usize) -> Result<SignatureBitmap, MessageError> {
    SignatureBitmap::new(height, width, msg.0.clone())
}

/// Bit `i` is 1 iff `logits[i] > 0`; an exact zero decodes to 0.
pub fn logits_to_message(logits: &[f64]) -> Result<Message, MessageError> {
    if let Some(index) = logits.iter().position(|v| v.is_nan()) {
        return Err(MessageError::NanLogit { index });
    }
    Message::new(logits.iter().map(|&v| u8::from(v > 0.0)).collect())
}

/// Fraction of positions where the two messages agree.
pub fn bit_accuracy(m: &Message, m_hat: &Message) -> Result<f64, MessageError> {
    if m.len() != m_hat.len() {
        return Err(MessageError::LengthMismatch(m.len(), m_hat.len()));
    }
    let agree = m.0.iter().zip(&m_hat.0).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / m.len() as f64)
}
