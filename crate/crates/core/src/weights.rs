//! Shared binary container for model weights.
//!
//! Layout: 4 magic bytes, a little-endian `u32` header length, the UTF-8
//! header, then every tensor as little-endian `f32` in header order. The
//! header is line oriented:
//!
//! ```text
//! key=value            (model configuration and counters)
//! tensor NAME D1xD2x…  (one line per stored tensor, in payload order)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::tensorgrad::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated {field}: expected {expected} bytes, found {found}")]
    Truncated { field: String, expected: usize, found: usize },
    #[error("header: {0}")]
    Header(String),
    #[error("missing header field `{0}`")]
    MissingField(String),
    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("tensor `{field}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        field: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub fields: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new() -> Self {
        Self {
            fields: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.fields.insert(key.to_string(), value.to_string());
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    /// Parses a header field.
    pub fn field<T: std::str::FromStr>(&self, key: &str) -> Result<T, WeightsError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.fields.get(key).ok_or_else(|| WeightsError::MissingField(key.to_string()))?;
        raw.parse().map_err(|e: T::Err| WeightsError::Field {
            field: key.to_string(),
            reason: format!("{raw:?}: {e}"),
        })
    }

    /// Removes the next tensor, which must be called `name` with `shape`.
    pub fn take(&mut self, index: &mut usize, name: &str, shape: &[usize]) -> Result<Tensor, WeightsError> {
        let (found_name, t) = self
            .tensors
            .get(*index)
            .ok_or_else(|| WeightsError::MissingField(name.to_string()))?;
        if found_name != name {
            return Err(WeightsError::Field {
                field: name.to_string(),
                reason: format!("found tensor `{found_name}` in its place"),
            });
        }
        if t.shape() != shape {
            return Err(WeightsError::ShapeMismatch {
                field: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        *index += 1;
        Ok(t.clone())
    }

    pub fn to_bytes(&self, magic: &[u8; 4]) -> Vec<u8> {
        let mut header = String::new();
        for (k, v) in &self.fields {
            header.push_str(&format!("{k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        }
        let payload: usize = self.tensors.iter().map(|(_, t)| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(8 + header.len() + payload);
        out.extend_from_slice(magic);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4]) -> Result<Self, WeightsError> {
        let need = |field: &str, expected: usize, found: usize| {
            if found < expected {
                Err(WeightsError::Truncated {
                    field: field.to_string(),
                    expected,
                    found,
                })
            } else {
                Ok(())
            }
        };
        need("magic", 4, bytes.len())?;
        if &bytes[..4] != magic {
            return Err(WeightsError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        need("header length", 8, bytes.len())?;
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        need("header", hlen, bytes.len() - 8)?;
        let header = std::str::from_utf8(&bytes[8..8 + hlen]).map_err(|e| WeightsError::Header(e.to_string()))?;

        let mut fields = BTreeMap::new();
        let mut shapes = Vec::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(rest) = line.strip_prefix("tensor ") {
                let (name, dims) = rest
                    .rsplit_once(' ')
                    .ok_or_else(|| WeightsError::Header(format!("bad tensor line {line:?}")))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| WeightsError::Field {
                        field: name.to_string(),
                        reason: format!("bad shape {dims:?}"),
                    })?;
                shapes.push((name.to_string(), shape));
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| WeightsError::Header(format!("bad line {line:?}")))?;
                fields.insert(k.to_string(), v.to_string());
            }
        }

        let mut pos = 8 + hlen;
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            need(&name, n * 4, bytes.len() - pos)?;
            let data = bytes[pos..pos + n * 4]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            pos += n * 4;
            let t = Tensor::new(shape, data).map_err(|e| WeightsError::Field {
                field: name.clone(),
                reason: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        if pos != bytes.len() {
            return Err(WeightsError::Header(format!("{} trailing bytes after payload", bytes.len() - pos)));
        }
        Ok(Self { fields, tensors })
    }

    pub fn save(&self, path: &Path, magic: &[u8; 4]) -> Result<(), WeightsError> {
        std::fs::write(path, self.to_bytes(magic)).map_err(|source| WeightsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path, magic: &[u8; 4]) -> Result<Self, WeightsError> {
        let bytes = std::fs::read(path).map_err(|source| WeightsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, magic)
    }
}

impl Default for Container {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.set("step", 7);
        c.set("name", "toy");
        c.push("a.w", Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.25, 0.0, 1e-3]).unwrap());
        c.push("a.b", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes(b"TEST");
        let back = Container::from_bytes(&bytes, b"TEST").unwrap();
        assert_eq!(back.fields, c.fields);
        assert_eq!(back.tensors[0].1.data()[5], f64::from(1e-3f32));
        assert_eq!(back.field::<u64>("step").unwrap(), 7);
        assert!(matches!(back.field::<u64>("name"), Err(WeightsError::Field { .. })));
        assert!(matches!(back.field::<u64>("other"), Err(WeightsError::MissingField(_))));
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes(b"TEST");
        assert!(matches!(Container::from_bytes(&bytes, b"WMF1"), Err(WeightsError::BadMagic { .. })));
        match Container::from_bytes(&bytes[..bytes.len() - 3], b"TEST") {
            Err(WeightsError::Truncated { field, .. }) => assert_eq!(field, "a.b"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Container::from_bytes(&bytes[..6], b"TEST"), Err(WeightsError::Truncated { .. })));
    }

    #[test]
    fn take_checks_name_and_shape() {
        let mut c = sample();
        let mut i = 0;
        assert!(matches!(c.take(&mut i, "a.w", &[3, 2]), Err(WeightsError::ShapeMismatch { .. })));
        assert!(c.take(&mut i, "a.w", &[2, 3]).is_ok());
        assert!(matches!(c.take(&mut i, "a.x", &[2]), Err(WeightsError::Field { .. })));
        assert!(c.take(&mut i, "a.b", &[2]).is_ok());
        assert!(matches!(c.take(&mut i, "a.c", &[2]), Err(WeightsError::MissingField(_))));
    }
}
