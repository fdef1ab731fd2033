//! Paired dataset discovery: `<root>/raw/*` sources matched to
//! `<root>/reference/*` by exact filename stem.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const RAW_DIR: &str = "raw";
pub const REFERENCE_DIR: &str = "reference";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePair {
    pub stem: String,
    pub source: PathBuf,
    pub reference: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    /// Sorted by stem.
    pub pairs: Vec<ImagePair>,
    /// Reference images with no matching source.
    pub orphan_references: Vec<PathBuf>,
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm"))
}

fn stem_of(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_owned)
}

/// Image files directly inside `dir`, keyed (and therefore sorted) by stem.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !is_image(&path) {
            continue;
        }
        let Some(stem) = stem_of(&path) else { continue };
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!(
                "two images share the stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

impl DatasetIndex {
    /// Scans `root/raw` and (if present) `root/reference`.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let raw = root.join(RAW_DIR);
        if !raw.is_dir() {
            return Err(Error::Dataset(format!("missing source directory {}", raw.display())));
        }
        let sources = list_images(&raw)?;
        let ref_dir = root.join(REFERENCE_DIR);
        let mut references = if ref_dir.is_dir() {
            list_images(&ref_dir)?
        } else {
            BTreeMap::new()
        };
        let pairs = sources
            .into_iter()
            .map(|(stem, source)| {
                let reference = references.remove(&stem);
                ImagePair {
                    stem,
                    source,
                    reference,
                }
            })
            .collect();
        Ok(Self {
            pairs,
            orphan_references: references.into_values().collect(),
        })
    }

    /// Sources that have no reference image.
    pub fn unpaired_sources(&self) -> Vec<&Path> {
        self.pairs
            .iter()
            .filter(|p| p.reference.is_none())
            .map(|p| p.source.as_path())
            .collect()
    }

    /// `(stem, source, reference)` triples for complete pairs only.
    pub fn complete_pairs(&self) -> Vec<(&str, &Path, &Path)> {
        self.pairs
            .iter()
            .filter_map(|p| p.reference.as_deref().map(|r| (p.stem.as_str(), p.source.as_path(), r)))
            .collect()
    }
}
