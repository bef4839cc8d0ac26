//! Split protocol, PCA -> LDA -> SVM fitting, evaluation, bundles and size
//! accounting.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::container::Container;
use crate::error::{arg_err, format_err, shape_err, Error, Result};
use crate::fusion::{format_block_set, parse_block_set, FeatureMatrix};
use crate::graph::WeightContainer;
use crate::reduce::{lda_fit, pca_fit, LdaModel, PcaModel};
use crate::svm::{svm_fit, SvmModel, SvmParams};

pub const DEFAULT_REPEATS: usize = 10;
pub const DEFAULT_SPLIT_SEED: u64 = 33;
pub const DEFAULT_PCA_SEED: u64 = 3;
pub const BUNDLE_KIND: &str = "bundle";
const MB: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Independent stratified shuffles at a train fraction.
    Shuffle { train_fraction: f64 },
    /// Stratified K-fold, repeated with fresh shuffles.
    KFold { folds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub repeats: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn shuffle(train_fraction: f64) -> Self {
        SplitSpec {
            mode: SplitMode::Shuffle { train_fraction },
            repeats: DEFAULT_REPEATS,
            seed: DEFAULT_SPLIT_SEED,
        }
    }

    pub fn train_fraction(&self) -> f64 {
        match self.mode {
            SplitMode::Shuffle { train_fraction } => train_fraction,
            SplitMode::KFold { folds } => 1.0 - 1.0 / folds as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Stratified splits; index lists are sorted ascending.
pub fn make_splits(labels: &[usize], spec: &SplitSpec) -> Result<Vec<Split>> {
    if spec.repeats == 0 {
        return Err(arg_err!("repeats must be positive"));
    }
    let members = class_members(labels);
    if let Some((c, m)) = members.iter().enumerate().find(|(_, m)| m.len() < 2) {
        return Err(arg_err!("class {c} has {} samples; stratified splits need at least 2", m.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut splits = Vec::new();
    match spec.mode {
        SplitMode::Shuffle { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(arg_err!("train fraction {train_fraction} must lie in (0, 1)"));
            }
            for _ in 0..spec.repeats {
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for m in &members {
                    let mut idx = m.clone();
                    idx.shuffle(&mut rng);
                    let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
                    train.extend_from_slice(&idx[..n_train]);
                    test.extend_from_slice(&idx[n_train..]);
                }
                train.sort_unstable();
                test.sort_unstable();
                splits.push(Split { train, test });
            }
        }
        SplitMode::KFold { folds } => {
            if folds < 2 {
                return Err(arg_err!("k-fold needs at least 2 folds"));
            }
            if let Some((c, m)) = members.iter().enumerate().find(|(_, m)| m.len() < folds) {
                return Err(arg_err!("class {c} has {} samples, fewer than {folds} folds", m.len()));
            }
            for _ in 0..spec.repeats {
                let mut fold_of = vec![0usize; labels.len()];
                for m in &members {
                    let mut idx = m.clone();
                    idx.shuffle(&mut rng);
                    for (pos, &i) in idx.iter().enumerate() {
                        fold_of[i] = pos % folds;
                    }
                }
                for f in 0..folds {
                    let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| fold_of[i] == f);
                    splits.push(Split { train, test });
                }
            }
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// PCA components, or `None` to skip PCA.
    pub n_pca: Option<usize>,
    pub use_lda: bool,
    pub svm: SvmParams,
    pub split: SplitSpec,
    /// Kept for protocol parity; the exact PCA solver does not consume it.
    pub seed_pca: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_pca: Some(crate::reduce::DEFAULT_PCA_COMPONENTS),
            use_lda: true,
            svm: SvmParams::default(),
            split: SplitSpec::shuffle(0.5),
            seed_pca: DEFAULT_PCA_SEED,
        }
    }
}

/// Rows `idx` of the feature matrix as an `f64` matrix.
pub fn gather_rows(fm: &FeatureMatrix, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(
        idx.len(),
        fm.dim(),
        idx.iter().flat_map(|&i| fm.row(i).iter().map(|&v| v as f64)),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub pca: Option<PcaModel>,
    pub lda: Option<LdaModel>,
    pub svm: SvmModel,
}

impl FittedPipeline {
    pub fn reduce(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut z = x.clone();
        if let Some(p) = &self.pca {
            z = p.transform(&z)?;
        }
        if let Some(l) = &self.lda {
            z = l.transform(&z)?;
        }
        Ok(z)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        self.svm.predict(&self.reduce(x)?)
    }
}

pub fn fit_pipeline(x: &DMatrix<f64>, labels: &[usize], n_classes: usize, cfg: &ExperimentConfig) -> Result<FittedPipeline> {
    let mut z = x.clone();
    let pca = match cfg.n_pca {
        Some(p) => {
            let m = pca_fit(&z, p)?;
            z = m.transform(&z)?;
            Some(m)
        }
        None => None,
    };
    let lda = if cfg.use_lda {
        let m = lda_fit(&z, labels, n_classes, None)?;
        z = m.transform(&z)?;
        Some(m)
    } else {
        None
    };
    let svm = svm_fit(&z, labels, n_classes, &cfg.svm)?.model;
    Ok(FittedPipeline { pca, lda, svm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    /// Percent correct on the test rows.
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Fits on one matrix and scores on another.
pub fn evaluate_matrices(
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    test_x: &DMatrix<f64>,
    test_y: &[usize],
    n_classes: usize,
    cfg: &ExperimentConfig,
) -> Result<SplitResult> {
    if test_y.is_empty() {
        return Err(arg_err!("empty test set"));
    }
    let model = fit_pipeline(train_x, train_y, n_classes, cfg)?;
    let pred = model.predict(test_x)?;
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in test_y.iter().zip(&pred) {
        confusion[t][p] += 1;
    }
    let correct = test_y.iter().zip(&pred).filter(|(a, b)| a == b).count();
    Ok(SplitResult {
        accuracy: 100.0 * correct as f64 / test_y.len() as f64,
        confusion,
    })
}

/// Checks the split for leakage, then fits on the train rows only.
pub fn evaluate_split(fm: &FeatureMatrix, split: &Split, cfg: &ExperimentConfig) -> Result<SplitResult> {
    let mut seen = vec![false; fm.n_rows()];
    for &i in &split.train {
        *seen.get_mut(i).ok_or_else(|| arg_err!("train index {i} out of range"))? = true;
    }
    for &i in &split.test {
        match seen.get(i) {
            None => return Err(arg_err!("test index {i} out of range")),
            Some(true) => return Err(Error::Leakage(i)),
            Some(false) => {}
        }
    }
    let labels = fm.labels();
    let train_y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let test_y: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    evaluate_matrices(
        &gather_rows(fm, &split.train),
        &train_y,
        &gather_rows(fm, &split.test),
        &test_y,
        fm.n_classes(),
        cfg,
    )
}

/// `(mean, population std)`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub per_split: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub block_set: Vec<usize>,
    pub class_names: Vec<String>,
    pub config: ExperimentConfig,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!("{:.2} ± {:.2}", self.accuracy_mean, self.accuracy_std)
    }

    fn config_lines(&self) -> Vec<(String, String)> {
        let c = &self.config;
        let split = match c.split.mode {
            SplitMode::Shuffle { train_fraction } => format!("shuffle:{train_fraction}"),
            SplitMode::KFold { folds } => format!("kfold:{folds}"),
        };
        vec![
            ("blocks".into(), format_block_set(&self.block_set)),
            ("pca".into(), c.n_pca.map_or("none".into(), |p| p.to_string())),
            ("lda".into(), c.use_lda.to_string()),
            ("svm_c".into(), c.svm.c.to_string()),
            ("split".into(), split),
            ("repeats".into(), c.split.repeats.to_string()),
            ("seed_pca".into(), c.seed_pca.to_string()),
            ("seed_split".into(), c.split.seed.to_string()),
            ("seed_svm".into(), c.svm.seed.to_string()),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.config_lines() {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("split,accuracy\n");
        for (i, a) in self.per_split.iter().enumerate() {
            let _ = writeln!(out, "{i},{a:.6}");
        }
        let _ = writeln!(out, "mean,{:.6}", self.accuracy_mean);
        let _ = writeln!(out, "std,{:.6}", self.accuracy_std);
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy: {} (%, {} splits)", self.summary(), self.per_split.len());
        for (k, v) in self.config_lines() {
            let _ = writeln!(out, "{k}: {v}");
        }
        out.push_str("confusion (rows = true class, columns = predicted):\n");
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "  {name}: {}", cells.join(" "));
        }
        out
    }
}

pub fn run_experiment(fm: &FeatureMatrix, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let splits = make_splits(fm.labels(), &cfg.split)?;
    if let Some(p) = cfg.n_pca {
        let smallest = splits.iter().map(|s| s.train.len()).min().unwrap_or(0);
        if p > smallest.min(fm.dim()) {
            return Err(arg_err!(
                "{p} PCA components exceed the smallest training fold ({smallest} rows, {} features)",
                fm.dim()
            ));
        }
    }
    let results = splits
        .par_iter()
        .map(|s| evaluate_split(fm, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let k = fm.n_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for r in &results {
        for (acc_row, row) in confusion.iter_mut().zip(&r.confusion) {
            for (a, b) in acc_row.iter_mut().zip(row) {
                *a += b;
            }
        }
    }
    let per_split: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&per_split);
    Ok(EvalReport {
        accuracy_mean,
        accuracy_std,
        per_split,
        confusion,
        block_set: fm.block_set().to_vec(),
        class_names: fm.class_names().to_vec(),
        config: cfg.clone(),
    })
}

/// Serializable classifier on top of the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineBundle {
    pub pca: Option<PcaModel>,
    pub lda: Option<LdaModel>,
    pub svm: SvmModel,
    pub block_set: Vec<usize>,
    /// Content hash of the weight container the features came from.
    pub weights_hash: String,
    pub class_names: Vec<String>,
}

impl PipelineBundle {
    pub fn fit(fm: &FeatureMatrix, cfg: &ExperimentConfig, weights_hash: &str) -> Result<Self> {
        let all: Vec<usize> = (0..fm.n_rows()).collect();
        let fitted = fit_pipeline(&gather_rows(fm, &all), fm.labels(), fm.n_classes(), cfg)?;
        Ok(PipelineBundle {
            pca: fitted.pca,
            lda: fitted.lda,
            svm: fitted.svm,
            block_set: fm.block_set().to_vec(),
            weights_hash: weights_hash.to_string(),
            class_names: fm.class_names().to_vec(),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        FittedPipeline {
            pca: self.pca.clone(),
            lda: self.lda.clone(),
            svm: self.svm.clone(),
        }
        .predict(x)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(BUNDLE_KIND);
        c.set_meta("block_set", format_block_set(&self.block_set));
        c.set_meta("weights_hash", self.weights_hash.clone());
        c.set_meta(
            "class_names",
            serde_json::to_string(&self.class_names).expect("strings serialize"),
        );
        if let Some(p) = &self.pca {
            p.write_into(&mut c, "pca").expect("fresh names");
        }
        if let Some(l) = &self.lda {
            l.write_into(&mut c, "lda").expect("fresh names");
        }
        self.svm.write_into(&mut c, "svm").expect("fresh names");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind() != BUNDLE_KIND {
            return Err(format_err!("expected a `{BUNDLE_KIND}` container, found `{}`", c.kind()));
        }
        let class_names: Vec<String> = serde_json::from_str(
            c.meta("class_names").ok_or_else(|| format_err!("missing class_names"))?,
        )
        .map_err(|e| format_err!("bad class_names: {e}"))?;
        let bundle = PipelineBundle {
            pca: c.contains("pca.components").then(|| PcaModel::read_from(c, "pca")).transpose()?,
            lda: c.contains("lda.projection").then(|| LdaModel::read_from(c, "lda")).transpose()?,
            svm: SvmModel::read_from(c, "svm")?,
            block_set: parse_block_set(c.meta("block_set").ok_or_else(|| format_err!("missing block_set"))?)?,
            weights_hash: c.meta("weights_hash").unwrap_or_default().to_string(),
            class_names,
        };
        bundle.check_dims().map_err(|e| Error::Format(e.to_string()))?;
        Ok(bundle)
    }

    fn check_dims(&self) -> Result<()> {
        let mut dim = crate::graph::feature_dim(&self.block_set)?;
        if let Some(p) = &self.pca {
            if p.input_dim() != dim {
                return Err(shape_err!("PCA input {} != feature dim {dim}", p.input_dim()));
            }
            dim = p.n_components();
        }
        if let Some(l) = &self.lda {
            if l.input_dim() != dim {
                return Err(shape_err!("LDA input {} != {dim}", l.input_dim()));
            }
            dim = l.n_components();
        }
        if self.svm.dim() != dim || self.svm.n_classes() != self.class_names.len() {
            return Err(shape_err!("SVM shape does not match the reduced features"));
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Serialized bytes per component. `total` is the sum of the other fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeBreakdown {
    pub base_extractor: usize,
    pub pca: usize,
    pub lda: usize,
    pub svm: usize,
    /// Bundle header and global metadata.
    pub bundle_overhead: usize,
    pub total: usize,
}

impl SizeBreakdown {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,bytes,mb\n");
        for (name, b) in [
            ("base_extractor", self.base_extractor),
            ("pca", self.pca),
            ("lda", self.lda),
            ("svm", self.svm),
            ("bundle_overhead", self.bundle_overhead),
            ("total", self.total),
        ] {
            let _ = writeln!(out, "{name},{b},{:.4}", b as f64 / MB);
        }
        out
    }
}

/// Byte sizes of a bundle's components (tensor payload plus manifest
/// entries) and of the truncated extractor it needs.
pub fn size_report(bundle: &PipelineBundle, weights: &WeightContainer) -> Result<SizeBreakdown> {
    let last = *bundle.block_set.last().ok_or_else(|| arg_err!("bundle has no blocks"))?;
    let base_extractor = weights.truncate(last)?.serialized_size_bytes();
    let c = bundle.to_container();
    let component = |prefix: &str| -> usize {
        c.entries()
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.length + Container::entry_manifest_len(e))
            .sum()
    };
    let (pca, lda, svm) = (component("pca."), component("lda."), component("svm."));
    let bundle_overhead = c.serialized_len() - pca - lda - svm;
    Ok(SizeBreakdown {
        base_extractor,
        pca,
        lda,
        svm,
        bundle_overhead,
        total: base_extractor + pca + lda + svm + bundle_overhead,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub blocks: Vec<usize>,
    pub feature_dim: usize,
    pub report: EvalReport,
    pub sizes: Option<SizeBreakdown>,
}

/// Growing prefixes of `ranking`, each sorted ascending.
pub fn ranking_prefixes(ranking: &[usize]) -> Vec<Vec<usize>> {
    (1..=ranking.len())
        .map(|k| {
            let mut p = ranking[..k].to_vec();
            p.sort_unstable();
            p
        })
        .collect()
}

/// Evaluates each block subset with the same protocol. With `weights`, a
/// bundle is fit on all rows to report component sizes.
pub fn ablation_sweep(
    fm: &FeatureMatrix,
    prefixes: &[Vec<usize>],
    cfg: &ExperimentConfig,
    weights: Option<&WeightContainer>,
) -> Result<Vec<AblationRow>> {
    prefixes
        .iter()
        .map(|blocks| {
            let sub = fm.select_blocks(blocks)?;
            let report = run_experiment(&sub, cfg)?;
            let sizes = match weights {
                Some(w) => Some(size_report(&PipelineBundle::fit(&sub, cfg, &w.content_hash())?, w)?),
                None => None,
            };
            Ok(AblationRow {
                blocks: blocks.clone(),
                feature_dim: sub.dim(),
                report,
                sizes,
            })
        })
        .collect()
}

/// One row per prefix: dataset, one membership column per block, accuracy,
/// then the size columns when available.
pub fn ablation_csv(rows: &[AblationRow], dataset: &str) -> String {
    let mut all_blocks: Vec<usize> = rows.iter().flat_map(|r| r.blocks.iter().copied()).collect();
    all_blocks.sort_unstable();
    all_blocks.dedup();
    let mut out = String::from("Dataset");
    for b in &all_blocks {
        let _ = write!(out, ",Layer {b}");
    }
    out.push_str(",Accuracy,accuracy_mean,accuracy_std,feature_dim,train_pct,n_pca");
    out.push_str(",base_mb,pca_mb,lda_mb,svm_mb,total_mb\n");
    for r in rows {
        out.push_str(dataset);
        for b in &all_blocks {
            out.push_str(if r.blocks.contains(b) { ",1" } else { ",0" });
        }
        let c = &r.report.config;
        let _ = write!(
            out,
            ",{},{:.6},{:.6},{},{:.0},{}",
            r.report.summary(),
            r.report.accuracy_mean,
            r.report.accuracy_std,
            r.feature_dim,
            c.split.train_fraction() * 100.0,
            c.n_pca.map_or("-".into(), |p| p.to_string())
        );
        match r.sizes {
            Some(s) => {
                for b in [s.base_extractor, s.pca, s.lda, s.svm, s.total] {
                    let _ = write!(out, ",{:.4}", b as f64 / MB);
                }
            }
            None => out.push_str(",,,,,"),
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSweepRow {
    pub n_pca: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub pca_bytes: usize,
}

/// Accuracy and PCA model size across component counts.
pub fn pca_sweep(fm: &FeatureMatrix, grid: &[usize], cfg: &ExperimentConfig) -> Result<Vec<PcaSweepRow>> {
    grid.iter()
        .map(|&p| {
            let cfg = ExperimentConfig {
                n_pca: Some(p),
                ..cfg.clone()
            };
            let report = run_experiment(fm, &cfg)?;
            let bundle = PipelineBundle::fit(fm, &cfg, "")?;
            let c = bundle.to_container();
            let pca_bytes = c
                .entries()
                .iter()
                .filter(|e| e.name.starts_with("pca."))
                .map(|e| e.length + Container::entry_manifest_len(e))
                .sum();
            Ok(PcaSweepRow {
                n_pca: p,
                accuracy_mean: report.accuracy_mean,
                accuracy_std: report.accuracy_std,
                pca_bytes,
            })
        })
        .collect()
}

pub fn pca_sweep_csv(rows: &[PcaSweepRow]) -> String {
    let mut out = String::from("n_pca,accuracy_mean,accuracy_std,pca_bytes,pca_mb\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{:.4}",
            r.n_pca,
            r.accuracy_mean,
            r.accuracy_std,
            r.pca_bytes,
            r.pca_bytes as f64 / MB
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_stratification() {
        let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
        let spec = SplitSpec::shuffle(0.5);
        let splits = make_splits(&labels, &spec).unwrap();
        assert_eq!(splits.len(), 10);
        for s in &splits {
            for c in 0..2 {
                assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 5);
                assert_eq!(s.test.iter().filter(|&&i| labels[i] == c).count(), 5);
            }
        }
        assert_eq!(splits, make_splits(&labels, &spec).unwrap());
        assert_ne!(splits[0], splits[1]);
    }

    #[test]
    fn split_errors() {
        assert!(make_splits(&[0, 0, 1], &SplitSpec::shuffle(0.5)).is_err());
        assert!(make_splits(&[0, 0, 1, 1], &SplitSpec::shuffle(1.0)).is_err());
        let kf = SplitSpec {
            mode: SplitMode::KFold { folds: 3 },
            repeats: 1,
            seed: 1,
        };
        assert!(make_splits(&[0, 0, 1, 1], &kf).is_err());
    }

    #[test]
    fn kfold_tests_partition_rows() {
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let spec = SplitSpec {
            mode: SplitMode::KFold { folds: 4 },
            repeats: 2,
            seed: 7,
        };
        let splits = make_splits(&labels, &spec).unwrap();
        assert_eq!(splits.len(), 8);
        for rep in splits.chunks(4) {
            let mut all: Vec<usize> = rep.iter().flat_map(|s| s.test.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn identical_accuracies_have_zero_std() {
        assert_eq!(mean_std(&[87.5; 6]), (87.5, 0.0));
    }

    #[test]
    fn leakage_is_rejected() {
        let fm = FeatureMatrix::new(
            vec![3],
            vec![2],
            vec![0.0, 1.0, 1.0, 0.0, 0.1, 1.0, 1.0, 0.1],
            vec![0, 1, 0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let split = Split {
            train: vec![0, 1, 2],
            test: vec![2, 3],
        };
        let cfg = ExperimentConfig {
            n_pca: None,
            use_lda: false,
            ..Default::default()
        };
        assert!(matches!(evaluate_split(&fm, &split, &cfg), Err(Error::Leakage(2))));
    }

    #[test]
    fn prefixes_sorted() {
        assert_eq!(ranking_prefixes(&[13, 3, 6]), vec![vec![13], vec![3, 13], vec![3, 6, 13]]);
    }
}
