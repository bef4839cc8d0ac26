//! Directory-per-class image datasets.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub name: String,
    pub images: Vec<PathBuf>,
}

/// Classes in lexicographic order; class id is the position in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    classes: Vec<ClassEntry>,
    hash: String,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn dataset_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Scans `root` for one subdirectory per class. Files with image extensions
/// are collected; everything else is ignored. The content hash covers class
/// names, relative paths and file bytes.
pub fn ingest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(dataset_err(root, "dataset root is not a directory"));
    }
    let mut hasher = Sha256::new();
    let mut classes = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| dataset_err(&dir, "class directory name is not UTF-8"))?
            .to_string();
        let images: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if images.is_empty() {
            return Err(dataset_err(&dir, "class directory contains no images"));
        }
        hasher.update(b"class\0");
        hasher.update(name.as_bytes());
        for img in &images {
            let bytes = fs::read(img).map_err(|e| Error::io(img, e))?;
            let rel = img.strip_prefix(root).unwrap_or(img);
            hasher.update(b"\0file\0");
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        classes.push(ClassEntry { name, images });
    }
    if classes.len() < 2 {
        return Err(dataset_err(
            root,
            format!("need at least 2 class directories, found {}", classes.len()),
        ));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        classes,
        hash: hex::encode(hasher.finalize()),
    })
}

impl DatasetManifest {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.images.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.images.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// `(path, class id)` in class-major, lexicographic order.
    pub fn samples(&self) -> Vec<(PathBuf, usize)> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(id, c)| c.images.iter().map(move |p| (p.clone(), id)))
            .collect()
    }
}
