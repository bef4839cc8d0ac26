//! Block significance from ReLU zero volume.
//!
//! For each block the BN after the depthwise convolution sits between two
//! ReLUs: the one after the expand BN ("preceding") and the one right after
//! it ("following"). With `v` the fraction of strictly positive elements in
//! a ReLU output, a layer's average zero volume over `N` sampled images is
//! `Z = mean(1 - v)`, and the block's significance is
//! `alpha = Z_prev / Z_next`. Blocks are ranked by descending alpha.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::DatasetManifest;
use crate::error::{arg_err, Error, Result};
use crate::graph::{block, Network, Tap, TapSite, BLOCK_COUNT};
use crate::preprocess::InputImage;
use crate::tensor::Tensor;

pub const DEFAULT_IMAGES_PER_CLASS: usize = 5;

/// Fraction of strictly positive elements.
pub fn positive_volume(t: &Tensor) -> f64 {
    let positive = t.data().iter().filter(|&&v| v > 0.0).count();
    positive as f64 / t.len() as f64
}

/// `(1/N) * sum(1 - v_i)` over the given ReLU outputs.
pub fn zero_volume_average(taps: &[Tensor]) -> Result<f64> {
    if taps.is_empty() {
        return Err(arg_err!("zero volume needs at least one tensor"));
    }
    let sum: f64 = taps.iter().map(|t| 1.0 - positive_volume(t)).sum();
    Ok(sum / taps.len() as f64)
}

/// `z_prev / z_next`, or `+inf` when the following ReLU never zeroes.
pub fn alpha(z_prev: f64, z_next: f64) -> f64 {
    if z_next > 0.0 {
        z_prev / z_next
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSignificance {
    pub block_index: usize,
    pub z_prev: f64,
    pub z_next: f64,
    pub alpha: f64,
}

impl BlockSignificance {
    pub fn new(block_index: usize, z_prev: f64, z_next: f64) -> Self {
        BlockSignificance {
            block_index,
            z_prev,
            z_next,
            alpha: alpha(z_prev, z_next),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.alpha.is_infinite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub images_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub per_block: Vec<BlockSignificance>,
    pub ranking: Vec<usize>,
    pub sample_spec: SampleSpec,
}

/// Descending alpha; ties keep the shallower block first. Infinite alphas
/// sort ahead of everything else.
pub fn rank_blocks(per_block: &[BlockSignificance]) -> Vec<usize> {
    let mut order: Vec<&BlockSignificance> = per_block.iter().collect();
    order.sort_by(|a, b| {
        b.alpha
            .total_cmp(&a.alpha)
            .then(a.block_index.cmp(&b.block_index))
    });
    order.into_iter().map(|s| s.block_index).collect()
}

impl SignificanceReport {
    pub fn new(per_block: Vec<BlockSignificance>, sample_spec: SampleSpec) -> Self {
        let ranking = rank_blocks(&per_block);
        SignificanceReport {
            per_block,
            ranking,
            sample_spec,
        }
    }

    /// The `k` most significant blocks, sorted ascending (fusion order).
    pub fn top(&self, k: usize) -> Vec<usize> {
        let mut top: Vec<usize> = self.ranking.iter().take(k).copied().collect();
        top.sort_unstable();
        top
    }

    pub fn rank_of(&self, block_index: usize) -> Option<usize> {
        self.ranking.iter().position(|&b| b == block_index).map(|r| r + 1)
    }

    pub fn get(&self, block_index: usize) -> Option<&BlockSignificance> {
        self.per_block.iter().find(|s| s.block_index == block_index)
    }

    /// One row per block in block order: `block_index,z_prev,z_next,alpha,rank`.
    /// Infinite alpha is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block_index,z_prev,z_next,alpha,rank\n");
        for s in &self.per_block {
            let alpha = if s.alpha.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.10}", s.alpha)
            };
            let _ = writeln!(
                out,
                "{},{:.10},{:.10},{},{}",
                s.block_index,
                s.z_prev,
                s.z_next,
                alpha,
                self.rank_of(s.block_index).unwrap_or(0)
            );
        }
        out
    }

    /// Rows sorted by rank, for plotting.
    pub fn to_ranked_csv(&self) -> String {
        let mut out = String::from("rank,block_index,z_prev,z_next,alpha\n");
        for (r, &b) in self.ranking.iter().enumerate() {
            let s = self.get(b).expect("ranking covers reported blocks");
            let _ = writeln!(out, "{},{},{:.10},{:.10},{:.10}", r + 1, b, s.z_prev, s.z_next, s.alpha);
        }
        out
    }
}

/// Chosen images, class-major in dataset order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub items: Vec<(PathBuf, usize)>,
    pub spec: SampleSpec,
}

/// Picks `images_per_class` images from every class, reproducibly.
pub fn sample_images(dataset: &DatasetManifest, images_per_class: usize, seed: u64) -> Result<SampleSet> {
    if images_per_class == 0 {
        return Err(arg_err!("images_per_class must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(images_per_class * dataset.n_classes());
    for (id, class) in dataset.classes().iter().enumerate() {
        if class.images.len() < images_per_class {
            return Err(Error::Dataset {
                path: dataset.root().join(&class.name),
                message: format!(
                    "class `{}` has {} images, need {images_per_class}",
                    class.name,
                    class.images.len()
                ),
            });
        }
        let mut picked = index::sample(&mut rng, class.images.len(), images_per_class).into_vec();
        picked.sort_unstable();
        items.extend(picked.into_iter().map(|i| (class.images[i].clone(), id)));
    }
    Ok(SampleSet {
        items,
        spec: SampleSpec {
            images_per_class,
            seed,
        },
    })
}

/// Per-image positive volumes `(v_prev, v_next)` for blocks `1..=through`.
fn image_volumes(network: &Network, image: &InputImage, through: usize) -> Result<Vec<(f64, f64)>> {
    let mut v = vec![(0.0, 0.0); through];
    network.forward_visit(image, through, |tap, t| match tap.site {
        TapSite::PreRelu => v[tap.block - 1].0 = positive_volume(t),
        TapSite::PostRelu => v[tap.block - 1].1 = positive_volume(t),
        TapSite::Bn => {}
    })?;
    Ok(v)
}

fn z_statistics(network: &Network, images: &[InputImage], through: usize) -> Result<Vec<(f64, f64)>> {
    if images.is_empty() {
        return Err(arg_err!("significance needs at least one image"));
    }
    let per_image: Vec<Vec<(f64, f64)>> = images
        .par_iter()
        .map(|img| image_volumes(network, img, through))
        .collect::<Result<_>>()?;
    // Sequential reduction in image order keeps the result bit-stable.
    let n = images.len() as f64;
    let mut z = vec![(0.0, 0.0); through];
    for vols in &per_image {
        for (acc, &(vp, vn)) in z.iter_mut().zip(vols) {
            acc.0 += 1.0 - vp;
            acc.1 += 1.0 - vn;
        }
    }
    Ok(z.into_iter().map(|(p, q)| (p / n, q / n)).collect())
}

pub fn block_alpha(network: &Network, images: &[InputImage], block_index: usize) -> Result<BlockSignificance> {
    block(block_index)?;
    let z = z_statistics(network, images, block_index)?;
    let (zp, zn) = z[block_index - 1];
    Ok(BlockSignificance::new(block_index, zp, zn))
}

/// Significance of all sixteen blocks over already-preprocessed images.
pub fn analyze_images(network: &Network, images: &[InputImage], spec: SampleSpec) -> Result<SignificanceReport> {
    if network.depth().last_block < BLOCK_COUNT {
        return Err(arg_err!(
            "significance needs all {BLOCK_COUNT} blocks, container stops at {}",
            network.depth().last_block
        ));
    }
    let z = z_statistics(network, images, BLOCK_COUNT)?;
    let per_block = z
        .into_iter()
        .enumerate()
        .map(|(i, (zp, zn))| BlockSignificance::new(i + 1, zp, zn))
        .collect::<Vec<_>>();
    for s in per_block.iter().filter(|s| s.is_degenerate()) {
        log::warn!("block {} never zeroes after its BN (z_next = 0); alpha is infinite", s.block_index);
    }
    Ok(SignificanceReport::new(per_block, spec))
}

/// Samples, preprocesses and analyzes in one go.
pub fn analyze(network: &Network, dataset: &DatasetManifest, spec: SampleSpec) -> Result<SignificanceReport> {
    let sample = sample_images(dataset, spec.images_per_class, spec.seed)?;
    let images = sample
        .items
        .par_iter()
        .map(|(p, _)| crate::preprocess::preprocess_file(p, network.preprocessing()))
        .collect::<Result<Vec<_>>>()?;
    analyze_images(network, &images, spec)
}

/// Convenience for callers that want the three taps of one block.
pub fn block_taps(block_index: usize) -> [Tap; 3] {
    [
        Tap::new(block_index, TapSite::PreRelu),
        Tap::new(block_index, TapSite::Bn),
        Tap::new(block_index, TapSite::PostRelu),
    ]
}
