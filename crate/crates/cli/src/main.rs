use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use rbff::config::RunConfig;
use rbff::dataset::{ingest, DatasetManifest};
use rbff::fusion::{self, FeatureMatrix};
use rbff::graph::{load_weights, Network, WeightContainer};
use rbff::pipeline::{self, PipelineBundle};
use rbff::significance::{self, SampleSpec, SignificanceReport};
use rbff::toy;

const VERSION: &str = concat!("rbff ", env!("CARGO_PKG_VERSION"));

#[derive(Parser)]
#[command(name = "rbff", version, about = "ReLU-based feature fusion for aerial scene classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank all sixteen blocks by significance; writes one CSV row per block.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract fused features into a feature container.
    Extract {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA/LDA/SVM on the whole dataset and write a bundle.
    Train {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated stratified evaluation; writes report.csv and report.txt.
    Evaluate {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate growing prefixes of the block ranking.
    Ablate {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        config: ConfigArgs,
        /// Explicit ranking, e.g. `13,3,6,16`. Computed from significance
        /// when omitted.
        #[arg(long)]
        ranking: Option<String>,
        /// Number of top-ranked blocks to sweep when computing the ranking.
        #[arg(long, default_value_t = 4)]
        top: usize,
        /// Dataset label for the first CSV column.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Byte breakdown of the deployed model.
    SizeReport {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CSV series for the significance ranking and the PCA sweep.
    PlotData {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        config: ConfigArgs,
        /// PCA component counts to sweep.
        #[arg(long, default_value = "10,20,50,100,200,400,600")]
        pca_grid: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded random full-depth weight container.
    MakeToyWeights {
        #[arg(long, default_value_t = toy::TOY_SEED)]
        seed: u64,
        #[arg(long, default_value_t = toy::TOY_INPUT_SIZE)]
        input_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a small synthetic texture dataset (three classes of PNGs).
    MakeToyDataset {
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    /// Weight container.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Dataset root with one directory per class.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Precomputed feature container (skips extraction).
    #[arg(long, conflicts_with = "dataset")]
    features: Option<PathBuf>,
    /// Reuse or store extracted features here.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated block indices.
    #[arg(long)]
    blocks: Option<String>,
    /// PCA components or `none`.
    #[arg(long)]
    pca: Option<String>,
    /// `true` or `false`.
    #[arg(long)]
    lda: Option<String>,
    /// SVM penalty.
    #[arg(long = "C", alias = "c")]
    c: Option<String>,
    #[arg(long)]
    train_frac: Option<String>,
    /// Stratified K-fold instead of shuffle splits.
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    seed_pca: Option<String>,
    #[arg(long)]
    seed_split: Option<String>,
    #[arg(long)]
    seed_svm: Option<String>,
    #[arg(long)]
    images_per_class: Option<String>,
    #[arg(long)]
    seed_sample: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("blocks", &self.blocks),
            ("pca", &self.pca),
            ("lda", &self.lda),
            ("c", &self.c),
            ("train_frac", &self.train_frac),
            ("folds", &self.folds),
            ("repeats", &self.repeats),
            ("seed_pca", &self.seed_pca),
            ("seed_split", &self.seed_split),
            ("seed_svm", &self.seed_svm),
            ("images_per_class", &self.images_per_class),
            ("seed_sample", &self.seed_sample),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        Ok(cfg)
    }
}

impl Input {
    fn weights(&self) -> Result<WeightContainer> {
        let path = self.weights.as_ref().context("--weights is required")?;
        Ok(load_weights(path)?)
    }

    fn dataset(&self) -> Result<DatasetManifest> {
        let path = self.dataset.as_ref().context("--dataset is required")?;
        let ds = ingest(path)?;
        info!("dataset {}: {} classes, {} images", path.display(), ds.n_classes(), ds.len());
        Ok(ds)
    }

    fn features(&self, blocks: &[usize]) -> Result<FeatureMatrix> {
        if let Some(path) = &self.features {
            let fm = FeatureMatrix::from_container(&rbff::container::Container::read(path)?)?;
            return Ok(fm.select_blocks(blocks)?);
        }
        let weights = self.weights()?;
        let dataset = self.dataset()?;
        let network = Network::new(&weights)?;
        let progress = |done: usize, total: usize| {
            if done.is_multiple_of(50) || done == total {
                info!("extracted {done}/{total}");
            }
        };
        match &self.cache_dir {
            Some(dir) => {
                let (fm, path) =
                    fusion::extract_batch_cached(&network, &weights.content_hash(), &dataset, blocks, dir, &progress)?;
                info!("features cached at {}", path.display());
                Ok(fm)
            }
            None => Ok(fusion::extract_batch(&network, &dataset, blocks, &progress)?),
        }
    }
}

fn significance(input: &Input, cfg: &RunConfig) -> Result<SignificanceReport> {
    let weights = input.weights()?;
    let network = Network::new(&weights)?;
    let spec = SampleSpec {
        images_per_class: cfg.images_per_class,
        seed: cfg.seed_sample,
    };
    Ok(significance::analyze(&network, &input.dataset()?, spec)?)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse().with_context(|| format!("bad list entry `{t}`")))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze { input, config, out } => {
            let cfg = config.resolve()?;
            let report = significance(&input, &cfg)?;
            let text = format!("{}{}", cfg.header(VERSION), report.to_csv());
            write_out(out.as_deref(), &text)?;
        }
        Command::Extract { input, config, out } => {
            let cfg = config.resolve()?;
            let fm = input.features(&cfg.blocks)?;
            let mut c = fm.to_container();
            for (k, v) in cfg.pairs() {
                c.set_meta(format!("run.{k}"), v);
            }
            c.write(&out)?;
            info!("wrote {} rows x {} features to {}", fm.n_rows(), fm.dim(), out.display());
        }
        Command::Train { input, config, out } => {
            let cfg = config.resolve()?;
            let fm = input.features(&cfg.blocks)?;
            let hash = match &input.weights {
                Some(_) => input.weights()?.content_hash(),
                None => String::new(),
            };
            let bundle = PipelineBundle::fit(&fm, &cfg.experiment(), &hash)?;
            let mut c = bundle.to_container();
            for (k, v) in cfg.pairs() {
                c.set_meta(format!("run.{k}"), v);
            }
            c.write(&out)?;
            info!("wrote bundle {}", out.display());
        }
        Command::Evaluate { input, config, out } => {
            let cfg = config.resolve()?;
            let fm = input.features(&cfg.blocks)?;
            let report = pipeline::run_experiment(&fm, &cfg.experiment())?;
            let header = cfg.header(VERSION);
            write_out(Some(&out.join("report.csv")), &format!("{header}{}", report.to_csv()))?;
            write_out(Some(&out.join("report.txt")), &format!("{header}{}", report.to_text()))?;
            println!("accuracy {} %", report.summary());
        }
        Command::Ablate {
            input,
            config,
            ranking,
            top,
            name,
            out,
        } => {
            let cfg = config.resolve()?;
            let ranking = match ranking {
                Some(r) => parse_list(&r)?,
                None => significance(&input, &cfg)?.top(top),
            };
            let mut union = ranking.clone();
            union.sort_unstable();
            let fm = input.features(&union)?;
            let weights = match &input.weights {
                Some(_) => Some(input.weights()?),
                None => None,
            };
            let prefixes = pipeline::ranking_prefixes(&ranking);
            let rows = pipeline::ablation_sweep(&fm, &prefixes, &cfg.experiment(), weights.as_ref())?;
            let dataset = name.unwrap_or_else(|| {
                input
                    .dataset
                    .as_ref()
                    .and_then(|p| p.file_name())
                    .map_or("dataset".into(), |n| n.to_string_lossy().into_owned())
            });
            let text = format!(
                "{}# ranking={}\n{}",
                cfg.header(VERSION),
                fusion::format_block_set(&ranking).replace('_', ","),
                pipeline::ablation_csv(&rows, &dataset)
            );
            write_out(Some(&out), &text)?;
        }
        Command::SizeReport { weights, bundle, out } => {
            let w = load_weights(&weights)?;
            let b = PipelineBundle::read(&bundle)?;
            if !b.weights_hash.is_empty() && b.weights_hash != w.content_hash() {
                log::warn!("bundle was trained on different weights");
            }
            let sizes = pipeline::size_report(&b, &w)?;
            write_out(out.as_deref(), &sizes.to_csv())?;
        }
        Command::PlotData {
            input,
            config,
            pca_grid,
            out,
        } => {
            let cfg = config.resolve()?;
            let header = cfg.header(VERSION);
            if input.features.is_none() {
                let report = significance(&input, &cfg)?;
                write_out(Some(&out.join("significance.csv")), &format!("{header}{}", report.to_ranked_csv()))?;
            }
            let fm = input.features(&cfg.blocks)?;
            let grid = parse_list(&pca_grid)?;
            let exp = cfg.experiment();
            let splits = pipeline::make_splits(fm.labels(), &exp.split)?;
            let limit = splits.iter().map(|s| s.train.len()).min().unwrap_or(0).min(fm.dim());
            let feasible: Vec<usize> = grid.iter().copied().filter(|&p| p >= 1 && p <= limit).collect();
            if feasible.len() < grid.len() {
                log::warn!("dropping PCA sizes above {limit} (smallest training fold)");
            }
            if feasible.is_empty() {
                bail!("no PCA size in the grid fits {limit} training rows");
            }
            let rows = pipeline::pca_sweep(&fm, &feasible, &exp)?;
            write_out(Some(&out.join("pca_sweep.csv")), &format!("{header}{}", pipeline::pca_sweep_csv(&rows)))?;
        }
        Command::MakeToyWeights { seed, input_size, out } => {
            toy::toy_weights(seed, input_size)?.write(&out)?;
        }
        Command::MakeToyDataset {
            per_class,
            size,
            seed,
            out,
        } => {
            toy::write_texture_dataset(&out, per_class, size, seed)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
