//! Line-oriented corpus manifests:
//! `id \t token ids \t frames file \t prev id \t next id`, `-` for no neighbour.

use std::fs;
use std::path::{Path, PathBuf};

use super::frames::load_frames;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub tokens: Vec<TokenId>,
    /// Relative paths resolve against the manifest's directory.
    pub frames: String,
    pub prev: Option<String>,
    pub next: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub frames: Matrix<f32>,
    pub prev: Option<String>,
    pub next: Option<String>,
}

impl Utterance {
    pub fn entry(&self, frames_file: impl Into<String>) -> ManifestEntry {
        ManifestEntry {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            frames: frames_file.into(),
            prev: self.prev.clone(),
            next: self.next.clone(),
        }
    }
}

fn neighbour(field: &str) -> Option<String> {
    (field != "-" && !field.is_empty()).then(|| field.to_string())
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::format(format!(
                "manifest line {}: expected 5 tab-separated fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let tokens = fields[1]
            .split_whitespace()
            .map(|t| t.parse::<TokenId>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("manifest line {}: bad token id: {e}", lineno + 1)))?;
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::format(format!("manifest line {}: duplicate id {id}", lineno + 1)));
        }
        out.push(ManifestEntry {
            id,
            tokens,
            frames: fields[2].to_string(),
            prev: neighbour(fields[3]),
            next: neighbour(fields[4]),
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let tokens: Vec<String> = e.tokens.iter().map(|t| t.to_string()).collect();
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.id,
            tokens.join(" "),
            e.frames,
            e.prev.as_deref().unwrap_or("-"),
            e.next.as_deref().unwrap_or("-")
        ));
    }
    s
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Missing(format!("cannot read manifest {}: {e}", path.display()))
    })?;
    parse_manifest(&text)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    fs::write(path, format_manifest(entries))?;
    Ok(())
}

fn resolve(manifest: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Reads a manifest and every frames file it names.
pub fn load_corpus(manifest: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let manifest = manifest.as_ref();
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let path = resolve(manifest, &e.frames);
            let frames = load_frames(&path).map_err(|err| match err {
                Error::Io(io) => Error::Missing(format!("frames file {}: {io}", path.display())),
                other => other,
            })?;
            Ok(Utterance {
                id: e.id,
                tokens: e.tokens,
                frames,
                prev: e.prev,
                next: e.next,
            })
        })
        .collect()
}
