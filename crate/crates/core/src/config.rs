//! Flat `key = value` run configuration shared by the CLI verbs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{format_block_set, parse_block_set};
use crate::pipeline::{ExperimentConfig, SplitMode, SplitSpec, DEFAULT_PCA_SEED, DEFAULT_REPEATS, DEFAULT_SPLIT_SEED};
use crate::reduce::DEFAULT_PCA_COMPONENTS;
use crate::significance::DEFAULT_IMAGES_PER_CLASS;
use crate::svm::SvmParams;

pub const DEFAULT_BLOCKS: [usize; 4] = [3, 6, 13, 16];
pub const DEFAULT_SAMPLE_SEED: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub blocks: Vec<usize>,
    pub n_pca: Option<usize>,
    pub use_lda: bool,
    pub svm_c: f64,
    pub train_fraction: f64,
    /// Stratified K-fold instead of shuffle splits when set.
    pub folds: Option<usize>,
    pub repeats: usize,
    pub seed_pca: u64,
    pub seed_split: u64,
    pub seed_svm: u64,
    pub images_per_class: usize,
    pub seed_sample: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            blocks: DEFAULT_BLOCKS.to_vec(),
            n_pca: Some(DEFAULT_PCA_COMPONENTS),
            use_lda: true,
            svm_c: 1.0,
            train_fraction: 0.5,
            folds: None,
            repeats: DEFAULT_REPEATS,
            seed_pca: DEFAULT_PCA_SEED,
            seed_split: DEFAULT_SPLIT_SEED,
            seed_svm: SvmParams::default().seed,
            images_per_class: DEFAULT_IMAGES_PER_CLASS,
            seed_sample: DEFAULT_SAMPLE_SEED,
        }
    }
}

pub const KEYS: &[&str] = &[
    "blocks",
    "pca",
    "lda",
    "c",
    "train_frac",
    "folds",
    "repeats",
    "seed_pca",
    "seed_split",
    "seed_svm",
    "images_per_class",
    "seed_sample",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "none" | "off" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

impl RunConfig {
    /// Sets one key; hyphens and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "blocks" => self.blocks = parse_block_set(value).map_err(|e| Error::Config(e.to_string()))?,
            "pca" => self.n_pca = parse_optional(&key, value)?,
            "lda" => {
                self.use_lda = match value {
                    "true" | "on" | "yes" | "1" => true,
                    "false" | "off" | "no" | "0" => false,
                    v => return Err(Error::Config(format!("`lda`: expected a boolean, got `{v}`"))),
                }
            }
            "c" | "svm_c" => self.svm_c = parse_num(&key, value)?,
            "train_frac" | "train_fraction" => self.train_fraction = parse_num(&key, value)?,
            "folds" => self.folds = parse_optional(&key, value)?,
            "repeats" => self.repeats = parse_num(&key, value)?,
            "seed_pca" => self.seed_pca = parse_num(&key, value)?,
            "seed_split" => self.seed_split = parse_num(&key, value)?,
            "seed_svm" => self.seed_svm = parse_num(&key, value)?,
            "images_per_class" => self.images_per_class = parse_num(&key, value)?,
            "seed_sample" => self.seed_sample = parse_num(&key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |o: Option<usize>| o.map_or("none".to_string(), |v| v.to_string());
        vec![
            ("blocks", format_block_set(&self.blocks).replace('_', ",")),
            ("pca", opt(self.n_pca)),
            ("lda", self.use_lda.to_string()),
            ("c", self.svm_c.to_string()),
            ("train_frac", self.train_fraction.to_string()),
            ("folds", opt(self.folds)),
            ("repeats", self.repeats.to_string()),
            ("seed_pca", self.seed_pca.to_string()),
            ("seed_split", self.seed_split.to_string()),
            ("seed_svm", self.seed_svm.to_string()),
            ("images_per_class", self.images_per_class.to_string()),
            ("seed_sample", self.seed_sample.to_string()),
        ]
    }

    /// Round-trips through [`RunConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// `# key=value` lines for output file headers.
    pub fn header(&self, tool_version: &str) -> String {
        let mut out = format!("# tool_version={tool_version}\n");
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let mode = match self.folds {
            Some(folds) => SplitMode::KFold { folds },
            None => SplitMode::Shuffle {
                train_fraction: self.train_fraction,
            },
        };
        ExperimentConfig {
            n_pca: self.n_pca,
            use_lda: self.use_lda,
            svm: SvmParams {
                c: self.svm_c,
                seed: self.seed_svm,
                ..SvmParams::default()
            },
            split: SplitSpec {
                mode,
                repeats: self.repeats,
                seed: self.seed_split,
            },
            seed_pca: self.seed_pca,
        }
    }
}
