//! Dataset manifests: one record per line, tab-separated
//! `image<TAB>mask[<TAB>depth]`, paths relative to the manifest's directory.
//! Blank lines and lines starting with `#` are skipped; a `# split: NAME`
//! comment sets the split tag.

use std::path::{Path, PathBuf};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub depth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub split: Option<String>,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_depth(&self) -> bool {
        self.records.iter().all(|r| r.depth.is_some())
    }
}

/// Parses manifest text, resolving relative paths against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest, DataError> {
    let mut m = Manifest::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let err = |msg: String| DataError::Manifest { line: i + 1, msg };
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.trim_start().strip_prefix('#') {
            if let Some(tag) = comment.trim().strip_prefix("split:") {
                let tag = tag.trim();
                if tag.is_empty() {
                    return Err(err("empty split tag".into()));
                }
                m.split = Some(tag.to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(err(format!(
                "expected 2 or 3 tab-separated paths, found {}",
                fields.len()
            )));
        }
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Err(err("empty path".into()));
        }
        let resolve = |f: &str| base.join(f.trim());
        m.records.push(Record {
            image: resolve(fields[0]),
            mask: resolve(fields[1]),
            depth: fields.get(2).map(|f| resolve(f)),
        });
    }
    if let Some(first) = m.records.first() {
        let depth = first.depth.is_some();
        if let Some(pos) = m.records.iter().position(|r| r.depth.is_some() != depth) {
            return Err(DataError::Manifest {
                line: 0,
                msg: format!("record {} disagrees with record 1 on having a depth map", pos + 1),
            });
        }
    }
    Ok(m)
}

/// Reads and parses a manifest file and checks that every referenced file
/// exists.
pub fn load_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let m = parse_manifest(&text, base).map_err(|e| e.in_file(path))?;
    for r in &m.records {
        for p in [Some(&r.image), Some(&r.mask), r.depth.as_ref()].into_iter().flatten() {
            if !p.is_file() {
                return Err(DataError::Missing(p.clone()));
            }
        }
    }
    Ok(m)
}
