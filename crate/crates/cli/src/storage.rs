//! On-disk artifact layout under the storage root.
//!
//! ```text
//! <root>/vectors/<concept>-<hash12>.json
//! <root>/profiles/<id>.json
//! <root>/traces/<id>.json
//! <root>/sessions/<id>.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use steerkit_core::profile::content_hash;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone)]
pub struct Storage {
    root: PathBuf,
}

/// Lowercase ASCII alphanumerics and single dashes.
pub fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let out = out.trim_matches('-').to_string();
    if out.is_empty() {
        "unnamed".into()
    } else {
        out
    }
}

/// Writes `bytes` unless the file exists. An existing file with different
/// content is an error.
pub fn write_new(path: &Path, bytes: &[u8]) -> AppResult<()> {
    match fs::read(path) {
        Ok(existing) if existing == bytes => return Ok(()),
        Ok(_) => {
            return Err(AppError::validation(format!(
                "{} exists with different content",
                path.display()
            )))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

impl Storage {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, kind: &str) -> AppResult<PathBuf> {
        let d = self.root.join(kind);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    pub fn vector_path(&self, concept: &str, json: &str) -> AppResult<PathBuf> {
        let hash = content_hash(json.as_bytes());
        Ok(self.dir("vectors")?.join(format!("{}-{}.json", slug(concept), &hash[..12])))
    }

    pub fn save_vector(&self, concept: &str, json: &str) -> AppResult<PathBuf> {
        let path = self.vector_path(concept, json)?;
        write_new(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn save(&self, kind: &str, id: &str, ext: &str, text: &str) -> AppResult<PathBuf> {
        let path = self.dir(kind)?.join(format!("{id}.{ext}"));
        write_new(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Overwrites; used for mutable session state.
    pub fn put(&self, kind: &str, id: &str, text: &str) -> AppResult<PathBuf> {
        let path = self.dir(kind)?.join(format!("{id}.json"));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn list(&self, kind: &str) -> AppResult<Vec<PathBuf>> {
        let dir = self.root.join(kind);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        out.sort();
        Ok(out)
    }

    /// A vector reference: an existing path, or a file name under `vectors/`.
    pub fn resolve_vector(&self, reference: &str) -> AppResult<PathBuf> {
        let direct = PathBuf::from(reference);
        if direct.is_file() {
            return Ok(direct);
        }
        let dir = self.root.join("vectors");
        for candidate in [dir.join(reference), dir.join(format!("{reference}.json"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
        Err(AppError::not_found(format!("vector `{reference}` not found")))
    }
}
