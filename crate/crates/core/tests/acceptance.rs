//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::tensor::{batch_norm_error, conv2d_error, depthwise_error, gap_error, CASES};
use common::{
    column, covariance, dot, generalized_eigenvalues, jacobi_eigen, layered_features, random_matrix, scatter,
    significance_oracle, sort_oracle,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbff::dataset::ingest;
use rbff::fusion::{extract, extract_batch, no_progress, FeatureMatrix};
use rbff::graph::{Depth, Network};
use rbff::pipeline::{evaluate_matrices, gather_rows, make_splits, run_experiment, ExperimentConfig, SplitSpec};
use rbff::preprocess::{preprocess_rgb, InputImage, Preprocessing};
use rbff::reduce::{lda_fit, pca_fit};
use rbff::significance::{analyze, analyze_images, SampleSpec};
use rbff::svm::{solve_binary, svm_fit, SvmParams};
use rbff::tensor::Tensor;
use rbff::toy::{shape_only_weights, texture_image, toy_weights, write_texture_dataset, TOY_INPUT_SIZE, TOY_SEED};

type Check = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within(t: Duration, limit_s: u64) -> bool {
    t.as_secs() < limit_s
}

fn feature_dimension() -> Check {
    let start = Instant::now();
    let pre = Preprocessing::default();
    let w = shape_only_weights(Depth::truncated(16), &pre).map_err(err)?;
    let net = Network::new(&w).map_err(err)?;
    let img = InputImage::from_tensor(Tensor::zeros(pre.size, pre.size, 3), pre).map_err(err)?;
    let d13 = extract(&net, &img, &[3, 6, 13]).map_err(err)?.dim();
    let d16 = extract(&net, &img, &[3, 6, 13, 16]).map_err(err)?.dim();
    let t = start.elapsed();
    Ok((
        d13 == 912 && d16 == 1872 && within(t, 60),
        format!("dims {d13} / {d16} (want 912 / 1872) at 224x224 in {:.1}s (< 60s)", t.as_secs_f64()),
    ))
}

fn parameter_accounting() -> Check {
    let full = shape_only_weights(Depth::FULL, &Preprocessing::default()).map_err(err)?;
    let p13 = full.truncate(13).map_err(err)?.count_params();
    let p16 = full.truncate(16).map_err(err)?.count_params();
    let r13 = (p13 as f64 - 0.59e6).abs() / 0.59e6;
    let r16 = (p16 as f64 - 1.46e6).abs() / 1.46e6;
    Ok((
        r13 <= 0.10 && r16 <= 0.10,
        format!(
            "through 13: {p13} ({:.1}% off 0.59M), through 16: {p16} ({:.1}% off 1.46M), tolerance 10%",
            100.0 * r13,
            100.0 * r16
        ),
    ))
}

fn significance_oracle_check() -> Check {
    let start = Instant::now();
    let w = toy_weights(TOY_SEED, TOY_INPUT_SIZE).map_err(err)?;
    let net = Network::new(&w).map_err(err)?;
    let pre = Preprocessing::with_size(TOY_INPUT_SIZE);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let images: Vec<InputImage> = (0..20)
        .map(|i| preprocess_rgb(&texture_image(i % 3, 64, &mut rng), &pre))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let spec = SampleSpec {
        images_per_class: 7,
        seed: 3,
    };
    let report = analyze_images(&net, &images, spec).map_err(err)?;
    let oracle = significance_oracle(&net, &images);
    let mut worst = 0.0f64;
    for (s, &(zp, zn, a)) in report.per_block.iter().zip(&oracle) {
        worst = worst.max((s.z_prev - zp).abs()).max((s.z_next - zn).abs()).max((s.alpha - a).abs());
    }
    let alphas: Vec<(usize, f64)> = report.per_block.iter().map(|s| (s.block_index, s.alpha)).collect();
    let ranked = report.ranking == sort_oracle(&alphas);
    let t = start.elapsed();
    Ok((
        worst <= 1e-10 && ranked && report.per_block.len() == 16 && within(t, 120),
        format!(
            "max |diff| {worst:.1e} (<= 1e-10) over 16 blocks x 20 images, ranking {} sort oracle, {:.1}s (< 120s)",
            if ranked { "matches" } else { "DIFFERS from" },
            t.as_secs_f64()
        ),
    ))
}

fn tensor_ops() -> Check {
    let errs = [
        ("conv2d", conv2d_error(11, CASES)),
        ("depthwise", depthwise_error(12, CASES)),
        ("batch_norm", batch_norm_error(13, CASES)),
        ("gap", gap_error(14, CASES)),
    ];
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((
        errs.iter().all(|(_, e)| *e <= 1e-6),
        format!("{CASES} cases each, max |diff|: {detail} (<= 1e-6)"),
    ))
}

fn pca_lda() -> Check {
    let x = random_matrix(50, 20, 31);
    let xm = DMatrix::from_fn(50, 20, |i, j| x[i][j] * (1.0 + j as f64 * 0.5));
    let xs: Vec<Vec<f64>> = (0..50).map(|i| xm.row(i).iter().copied().collect()).collect();
    let (values, vectors) = jacobi_eigen(&covariance(&xs));
    let pca = pca_fit(&xm, 20).map_err(err)?;
    let mut pca_err = 0.0f64;
    for i in 0..20 {
        let want = column(&vectors, i);
        let got: Vec<f64> = pca.components.row(i).iter().copied().collect();
        let sign = dot(&want, &got).signum();
        for (a, b) in want.iter().zip(&got) {
            pca_err = pca_err.max((a * sign - b).abs());
        }
        pca_err = pca_err.max((pca.explained_variance[i] - values[i]).abs() / values[0]);
    }

    let k = 4;
    let mut y = random_matrix(60, 10, 32);
    let shifts = random_matrix(k, 10, 33);
    let labels: Vec<usize> = (0..60).map(|i| i % k).collect();
    for (r, &l) in y.iter_mut().zip(&labels) {
        r.iter_mut().zip(&shifts[l]).for_each(|(v, s)| *v += 1.5 * s);
    }
    let ym = DMatrix::from_fn(60, 10, |i, j| y[i][j]);
    let lda = lda_fit(&ym, &labels, k, None).map_err(err)?;
    let (sw, sb) = scatter(&y, &labels, k);
    let oracle = generalized_eigenvalues(&sb, &sw);
    let lda_err = lda
        .fisher_ratios
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max);
    let dim_ok = lda.n_components() == k - 1;
    Ok((
        pca_err <= 1e-6 && lda_err <= 1e-5 && dim_ok,
        format!(
            "PCA 50x20 max diff {pca_err:.1e} (<= 1e-6, up to sign); LDA 60x10 dim {} (want {}), Fisher ratio rel diff {lda_err:.1e} (<= 1e-5)",
            lda.n_components(),
            k - 1
        ),
    ))
}

fn svm_properties() -> Check {
    let params = SvmParams::default();
    let mut worst_gap = 0.0f64;
    let mut all_converged = true;
    let mut note = |s: &rbff::svm::BinarySolution| {
        worst_gap = worst_gap.max(s.gap() / s.primal.abs());
        all_converged &= s.converged;
    };
    for seed in 0..10 {
        let x = random_matrix(40, 4, 500 + seed);
        let y: Vec<f64> = x.iter().map(|r| if r[0] - r[2] > 0.0 { 1.0 } else { -1.0 }).collect();
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        note(&solve_binary(&rows, &y, &params, params.seed).map_err(err)?);
    }

    let sep = common::clustered_features(20, 12.0, 40);
    let xs = gather_rows(&sep, &(0..sep.n_rows()).collect::<Vec<_>>());
    let fit = svm_fit(&xs, sep.labels(), 3, &params).map_err(err)?;
    fit.solutions.iter().for_each(&mut note);
    let train_acc = fit.model.predict(&xs).map_err(err)?.iter().zip(sep.labels()).filter(|(a, b)| a == b).count()
        as f64
        / sep.n_rows() as f64;

    let xor = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
    let xor_labels = [0, 0, 1, 1];
    let xfit = svm_fit(&xor, &xor_labels, 2, &params).map_err(err)?;
    xfit.solutions.iter().for_each(&mut note);
    let xor_acc = xfit.model.predict(&xor).map_err(err)?.iter().zip(&xor_labels).filter(|(a, b)| a == b).count()
        as f64
        / 4.0;

    let again = svm_fit(&xs, sep.labels(), 3, &params).map_err(err)?;
    let deterministic = again.model == fit.model && again.solutions == fit.solutions;
    Ok((
        worst_gap <= 1e-4 && all_converged && train_acc == 1.0 && xor_acc < 1.0 && deterministic,
        format!(
            "worst gap/|primal| {worst_gap:.1e} (<= 1e-4), separable train acc {:.0}%, XOR acc {:.0}% (< 100%), seed 333 {}",
            100.0 * train_acc,
            100.0 * xor_acc,
            if deterministic { "deterministic" } else { "NOT deterministic" }
        ),
    ))
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    write_texture_dataset(dir.path(), 40, 64, 7).map_err(err)?;
    let ds = ingest(dir.path()).map_err(err)?;
    let w = toy_weights(TOY_SEED, TOY_INPUT_SIZE).map_err(err)?;
    let net = Network::new(&w).map_err(err)?;
    let report = analyze(&net, &ds, SampleSpec { images_per_class: 5, seed: 3 }).map_err(err)?;
    let mut blocks = report.top(4);
    blocks.sort_unstable();
    let fm = extract_batch(&net, &ds, &blocks, &no_progress).map_err(err)?;
    let cfg = ExperimentConfig {
        n_pca: None,
        use_lda: true,
        split: SplitSpec::shuffle(0.5),
        ..ExperimentConfig::default()
    };
    let eval = run_experiment(&fm, &cfg).map_err(err)?;
    let n = eval.per_split.len() as f64;
    let mean = eval.per_split.iter().sum::<f64>() / n;
    let std = (eval.per_split.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    let stat_diff = (mean - eval.accuracy_mean).abs().max((std - eval.accuracy_std).abs());
    let t = start.elapsed();
    Ok((
        eval.accuracy_mean >= 95.0 && stat_diff <= 1e-9 && within(t, 300),
        format!(
            "blocks {blocks:?} from analyze, PCA off + LDA + SVM, 50% train x {} repeats: {} % (>= 95), std recompute diff {stat_diff:.1e} (<= 1e-9), {:.1}s (< 300s)",
            eval.per_split.len(),
            eval.summary(),
            t.as_secs_f64()
        ),
    ))
}

fn ablation_config() -> ExperimentConfig {
    ExperimentConfig {
        n_pca: None,
        ..ExperimentConfig::default()
    }
}

fn ablation() -> Check {
    let fm = layered_features(30, [0.1, 0.12, 0.15, 0.2], 50);
    let cfg = ablation_config();
    let prefixes: [&[usize]; 4] = [&[3], &[3, 6], &[3, 6, 13], &[3, 6, 13, 16]];
    let mut means = Vec::new();
    for p in prefixes {
        means.push(run_experiment(&fm.select_blocks(p).map_err(err)?, &cfg).map_err(err)?.accuracy_mean);
    }
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    let shown = means.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(" -> ");
    Ok((monotone, format!("prefix means {shown} (non-decreasing)")))
}

const CANARY_SCALE: f64 = 3.0;

/// Accuracy with an extra column that is zero on train rows and encodes
/// the label on test rows. `leaky` fits on train and test rows together.
fn canary_run(fm: &FeatureMatrix, cfg: &ExperimentConfig, leaky: bool) -> Result<Vec<f64>, String> {
    let splits = make_splits(fm.labels(), &cfg.split).map_err(err)?;
    let labels = fm.labels();
    let with_col = |rows: &[usize], canary: bool| {
        let base = gather_rows(fm, rows);
        let d = base.ncols();
        DMatrix::from_fn(rows.len(), d + 1, |i, j| {
            if j < d {
                base[(i, j)]
            } else if canary {
                CANARY_SCALE * labels[rows[i]] as f64
            } else {
                0.0
            }
        })
    };
    splits
        .iter()
        .map(|s| {
            let test_x = with_col(&s.test, true);
            let test_y: Vec<usize> = s.test.iter().map(|&i| labels[i]).collect();
            let (fit_x, fit_y) = if leaky {
                let rows: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                let mut x = with_col(&rows, false);
                let last = x.ncols() - 1;
                for (r, &i) in rows.iter().enumerate().skip(s.train.len()) {
                    x[(r, last)] = CANARY_SCALE * labels[i] as f64;
                }
                (x, rows.iter().map(|&i| labels[i]).collect::<Vec<_>>())
            } else {
                (with_col(&s.train, false), s.train.iter().map(|&i| labels[i]).collect())
            };
            evaluate_matrices(&fit_x, &fit_y, &test_x, &test_y, fm.n_classes(), cfg)
                .map(|r| r.accuracy)
                .map_err(err)
        })
        .collect()
}

fn leakage_canary() -> Check {
    let fm = layered_features(30, [0.15, 0.0, 0.0, 0.0], 60).select_blocks(&[3]).map_err(err)?;
    let cfg = ExperimentConfig {
        n_pca: Some(20),
        ..ExperimentConfig::default()
    };
    let clean = run_experiment(&fm, &cfg).map_err(err)?;
    let canary = canary_run(&fm, &cfg, false)?;
    let canary_mean = canary.iter().sum::<f64>() / canary.len() as f64;
    let leaky = canary_run(&fm, &cfg, true)?;
    let leaky_mean = leaky.iter().sum::<f64>() / leaky.len() as f64;
    let bound = clean.accuracy_mean + clean.accuracy_std;
    Ok((
        canary_mean <= bound && leaky_mean > bound,
        format!(
            "clean {} %, with test-only canary {canary_mean:.2} % (<= {bound:.2}); positive control fitting on test rows reaches {leaky_mean:.2} %",
            clean.summary()
        ),
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("feature-dimension identity", feature_dimension),
        ("parameter accounting", parameter_accounting),
        ("significance oracle", significance_oracle_check),
        ("tensor-op oracles", tensor_ops),
        ("PCA/LDA oracles", pca_lda),
        ("SVM properties", svm_properties),
        ("end-to-end smoke", end_to_end),
        ("ablation monotonicity", ablation),
        ("leakage canary", leakage_canary),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
