//! RBFF feature vectors: global average pooling of the depthwise-BN output
//! of each selected block, concatenated in ascending block order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::container::Container;
use crate::dataset::DatasetManifest;
use crate::error::{arg_err, format_err, shape_err, Error, Result};
use crate::graph::{block, Network, TapSite};
use crate::preprocess::{preprocess_file, InputImage};
use crate::tensor::global_average_pool;

pub const FEATURES_KIND: &str = "features";

/// Checks that a block set is non-empty, strictly ascending and in range.
pub fn validate_block_set(block_set: &[usize]) -> Result<()> {
    if block_set.is_empty() {
        return Err(arg_err!("block set is empty"));
    }
    for &b in block_set {
        block(b)?;
    }
    if block_set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(arg_err!("block set {block_set:?} must be strictly ascending"));
    }
    Ok(())
}

pub fn format_block_set(block_set: &[usize]) -> String {
    block_set.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("_")
}

pub fn parse_block_set(s: &str) -> Result<Vec<usize>> {
    let mut blocks = s
        .split([',', '_'])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| arg_err!("bad block index `{t}`")))
        .collect::<Result<Vec<_>>>()?;
    blocks.sort_unstable();
    blocks.dedup();
    validate_block_set(&blocks)?;
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub block_set: Vec<usize>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn extract(network: &Network, image: &InputImage, block_set: &[usize]) -> Result<FeatureVector> {
    validate_block_set(block_set)?;
    let through = *block_set.last().unwrap();
    let mut values = Vec::new();
    network.forward_visit(image, through, |tap, t| {
        if tap.site == TapSite::Bn && block_set.contains(&tap.block) {
            values.extend(global_average_pool(t));
        }
    })?;
    Ok(FeatureVector {
        values,
        block_set: block_set.to_vec(),
    })
}

/// Fused features for a whole dataset, row-major, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    block_set: Vec<usize>,
    block_dims: Vec<usize>,
    data: Vec<f32>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        block_set: Vec<usize>,
        block_dims: Vec<usize>,
        data: Vec<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if block_set.len() != block_dims.len() {
            return Err(shape_err!("block_set and block_dims lengths differ"));
        }
        let dim: usize = block_dims.iter().sum();
        if dim == 0 {
            return Err(shape_err!("feature dimension is zero"));
        }
        if data.len() != dim * labels.len() {
            return Err(shape_err!(
                "{} rows of dim {dim} need {} values, got {}",
                labels.len(),
                dim * labels.len(),
                data.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(arg_err!("label {bad} has no class name ({} classes)", class_names.len()));
        }
        Ok(FeatureMatrix {
            block_set,
            block_dims,
            data,
            labels,
            class_names,
        })
    }

    pub fn from_vectors(rows: &[FeatureVector], labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let first = rows.first().ok_or_else(|| arg_err!("no feature rows"))?;
        let block_set = first.block_set.clone();
        let block_dims = block_set
            .iter()
            .map(|&b| block(b).map(|s| s.expanded_channels()))
            .collect::<Result<Vec<_>>>()?;
        if rows.iter().any(|r| r.block_set != block_set) {
            return Err(arg_err!("feature rows disagree on the block set"));
        }
        if rows.len() != labels.len() {
            return Err(arg_err!("{} rows but {} labels", rows.len(), labels.len()));
        }
        let data = rows.iter().flat_map(|r| r.values.iter().copied()).collect();
        FeatureMatrix::new(block_set, block_dims, data, labels, class_names)
    }

    pub fn block_set(&self) -> &[usize] {
        &self.block_set
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Column subset for the given blocks, which must all be present.
    pub fn select_blocks(&self, blocks: &[usize]) -> Result<FeatureMatrix> {
        validate_block_set(blocks)?;
        let mut ranges = Vec::new();
        for &b in blocks {
            let pos = self
                .block_set
                .iter()
                .position(|&x| x == b)
                .ok_or_else(|| arg_err!("block {b} not in feature set {:?}", self.block_set))?;
            let start: usize = self.block_dims[..pos].iter().sum();
            ranges.push(start..start + self.block_dims[pos]);
        }
        let mut data = Vec::with_capacity(self.n_rows() * ranges.iter().map(|r| r.len()).sum::<usize>());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            for r in &ranges {
                data.extend_from_slice(&row[r.clone()]);
            }
        }
        FeatureMatrix::new(
            blocks.to_vec(),
            ranges.iter().map(|r| r.len()).collect(),
            data,
            self.labels.clone(),
            self.class_names.clone(),
        )
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(FEATURES_KIND);
        c.set_meta("block_set", format_block_set(&self.block_set));
        c.set_meta(
            "class_names",
            serde_json::to_string(&self.class_names).expect("strings serialize"),
        );
        let n = self.n_rows();
        let mut start = 0;
        for (&b, &d) in self.block_set.iter().zip(&self.block_dims) {
            let mut col = Vec::with_capacity(n * d);
            for i in 0..n {
                col.extend_from_slice(&self.row(i)[start..start + d]);
            }
            c.push(format!("block_{b}"), vec![n, d], col).expect("fresh names");
            start += d;
        }
        c.push("labels", vec![n], self.labels.iter().map(|&l| l as f32).collect())
            .expect("fresh names");
        c
    }

    pub fn from_container(c: &Container) -> Result<FeatureMatrix> {
        if c.kind() != FEATURES_KIND {
            return Err(format_err!("expected a `{FEATURES_KIND}` container, found `{}`", c.kind()));
        }
        let block_set = parse_block_set(c.meta("block_set").ok_or_else(|| format_err!("missing block_set"))?)?;
        let class_names: Vec<String> = serde_json::from_str(
            c.meta("class_names").ok_or_else(|| format_err!("missing class_names"))?,
        )
        .map_err(|e| format_err!("bad class_names: {e}"))?;
        let (lshape, lvals) = c.get("labels").ok_or_else(|| format_err!("missing labels"))?;
        if lshape.len() != 1 {
            return Err(format_err!("labels must be 1-D"));
        }
        let n = lshape[0];
        let labels = lvals
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && (v as usize) < class_names.len() {
                    Ok(v as usize)
                } else {
                    Err(format_err!("bad label value {v}"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cols = Vec::new();
        for &b in &block_set {
            let (shape, vals) = c.get(&format!("block_{b}")).ok_or_else(|| format_err!("missing block_{b}"))?;
            if shape.len() != 2 || shape[0] != n || shape[1] == 0 {
                return Err(format_err!("block_{b} has shape {shape:?}, expected [{n}, d]"));
            }
            cols.push((shape[1], vals));
        }
        let dim: usize = cols.iter().map(|c| c.0).sum();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            for &(d, vals) in &cols {
                data.extend_from_slice(&vals[i * d..(i + 1) * d]);
            }
        }
        FeatureMatrix::new(block_set, cols.iter().map(|c| c.0).collect(), data, labels, class_names)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,class");
        for i in 0..self.dim() {
            let _ = write!(out, ",f{i}");
        }
        out.push('\n');
        for i in 0..self.n_rows() {
            let l = self.labels[i];
            let _ = write!(out, "{l},{}", self.class_names[l]);
            for v in self.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Called with `(done, total)` as images finish.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

pub fn no_progress(_: usize, _: usize) {}

pub fn extract_batch(
    network: &Network,
    dataset: &DatasetManifest,
    block_set: &[usize],
    progress: Progress<'_>,
) -> Result<FeatureMatrix> {
    validate_block_set(block_set)?;
    let samples = dataset.samples();
    let total = samples.len();
    let done = AtomicUsize::new(0);
    let rows = samples
        .par_iter()
        .map(|(path, _)| {
            let image = preprocess_file(path, network.preprocessing())?;
            let fv = extract(network, &image, block_set)?;
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            Ok(fv)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = samples.iter().map(|(_, l)| *l).collect();
    FeatureMatrix::from_vectors(&rows, labels, dataset.class_names())
}

/// Cache file name for a (weights, block set, dataset) triple.
pub fn cache_key(weights_hash: &str, block_set: &[usize], dataset_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(weights_hash.as_bytes());
    h.update(b"\0");
    h.update(format_block_set(block_set).as_bytes());
    h.update(b"\0");
    h.update(dataset_hash.as_bytes());
    format!("features-{}.rbff", &hex::encode(h.finalize())[..16])
}

/// Loads features from `cache_dir` when a matching cache exists, otherwise
/// extracts and writes the cache.
pub fn extract_batch_cached(
    network: &Network,
    weights_hash: &str,
    dataset: &DatasetManifest,
    block_set: &[usize],
    cache_dir: &Path,
    progress: Progress<'_>,
) -> Result<(FeatureMatrix, PathBuf)> {
    let path = cache_dir.join(cache_key(weights_hash, block_set, dataset.hash()));
    if path.exists() {
        let c = Container::read(&path)?;
        let keyed = c.meta("weights_hash") == Some(weights_hash) && c.meta("dataset_hash") == Some(dataset.hash());
        if keyed {
            log::info!("using cached features {}", path.display());
            return Ok((FeatureMatrix::from_container(&c)?, path));
        }
        log::warn!("ignoring stale feature cache {}", path.display());
    }
    let fm = extract_batch(network, dataset, block_set, progress)?;
    let mut c = fm.to_container();
    c.set_meta("weights_hash", weights_hash);
    c.set_meta("dataset_hash", dataset.hash());
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    c.write(&path)?;
    Ok((fm, path))
}
