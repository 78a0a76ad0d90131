//! `path,identity[,source]` CSV manifests. Paths are relative to the
//! manifest's directory unless absolute; `#` starts a comment line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::bioeval::SourceTag;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub identity: String,
    pub source: SourceTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, root: &Path) -> Result<Self, PipelineError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: &str| PipelineError::Manifest {
                line: line_no,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let (path, identity, source) = match fields.as_slice() {
                [p, id] => (*p, *id, SourceTag::Original),
                [p, id, src] => (*p, *id, src.parse().map_err(|_| err(&format!("unknown source tag {src:?}")))?),
                _ => return Err(err("expected path,identity[,source]")),
            };
            if path.is_empty() {
                return Err(err("empty path"));
            }
            if identity.is_empty() {
                return Err(err("empty identity label"));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                identity: identity.to_string(),
                source,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &root)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    /// Serialised form with relative paths as stored.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# path,identity,source\n");
        for e in &self.entries {
            writeln!(out, "{},{},{}", e.path.display(), e.identity, e.source).expect("writing to a String");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_text()).map_err(|e| PipelineError::io(path, e))
    }
}
