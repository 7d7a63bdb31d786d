//! Labeled image datasets: directory scanning and CSV manifests.
//!
//! A dataset on disk is a root directory with one subdirectory per symbol
//! label, each holding PNG/JPEG files. A manifest may alternatively be given
//! as a UTF-8 CSV with header `path,label`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

/// Ordered list of (image path, label) pairs plus the distinct label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    labels: Vec<String>,
}

impl DatasetManifest {
    /// Build a manifest from entries, deriving the label set (sorted
    /// lexicographically). Requires at least 2 labels and at least 2 entries
    /// per label, as needed by the stratified split.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &entries {
            *counts.entry(e.label.as_str()).or_insert(0) += 1;
        }
        if counts.len() < 2 {
            return Err(Error::validation(format!(
                "dataset needs >= 2 distinct labels, found {}",
                counts.len()
            )));
        }
        if let Some((label, n)) = counts.iter().find(|(_, &n)| n < 2) {
            return Err(Error::validation(format!(
                "label \"{label}\" has {n} entries, needs >= 2"
            )));
        }
        let labels = counts.keys().map(|s| s.to_string()).collect();
        Ok(Self { entries, labels })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries carrying the given label, in manifest order.
    pub fn entries_with_label<'a>(
        &'a self,
        label: &'a str,
    ) -> impl Iterator<Item = &'a ManifestEntry> {
        self.entries.iter().filter(move |e| e.label == label)
    }
}

fn is_supported_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png") | Some("jpg") | Some("jpeg")
    )
}

/// Scan `root` (one subdirectory per label) into a manifest. Entries are
/// ordered lexicographically by full path, so the result is stable across
/// platforms and repeated runs.
pub fn scan_dataset_dir(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    let dirs = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut subdirs: Vec<PathBuf> = dirs
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for dir in subdirs {
        let label = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::validation(format!("non-UTF-8 label directory: {dir:?}")))?
            .to_string();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|f| f.ok().map(|f| f.path()))
            .filter(|p| p.is_file() && is_supported_image(p))
            .collect();
        files.sort();
        entries.extend(files.into_iter().map(|path| ManifestEntry {
            path,
            label: label.clone(),
        }));
    }
    DatasetManifest::new(entries)
}

/// Read a `path,label` CSV manifest. Relative image paths are resolved
/// against the CSV file's directory.
pub fn read_manifest_csv(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut entries = Vec::new();
    for record in reader.deserialize::<ManifestEntry>() {
        let mut entry = record?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        entries.push(entry);
    }
    DatasetManifest::new(entries)
}

/// Write a manifest as `path,label` CSV (atomically).
pub fn write_manifest_csv(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for entry in manifest.entries() {
        writer.serialize(entry)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::validation(format!("csv flush failed: {e}")))?;
    atomic_write(path, &bytes)
}
