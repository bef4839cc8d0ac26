//! PCA followed by LDA.
//!
//! Both fit in `f64`. PCA uses an exact thin SVD of the centered data.
//! LDA solves `S_b v = theta S_w v` through the low-rank factor of the
//! between-class scatter, so it never forms `S_w^-1 S_b` explicitly and
//! stays cheap when the input dimension exceeds the sample count.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::container::Container;
use crate::error::{arg_err, format_err, shape_err, Result};

pub const DEFAULT_PCA_COMPONENTS: usize = 600;
/// `S_w` gets a ridge once its condition number exceeds this.
pub const LDA_CONDITION_LIMIT: f64 = 1e10;
/// Ridge size relative to the mean eigenvalue `trace(S_w) / p`.
pub const LDA_RIDGE_SCALE: f64 = 1e-6;

/// Flips `v` so that its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn center(x: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `n_components x d`, orthonormal rows.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err!("PCA expects {} features, got {}", self.input_dim(), x.ncols()));
        }
        Ok(center(x, &self.mean) * self.components.transpose())
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.n_components() {
            return Err(shape_err!("PCA has {} components, got {}", self.n_components(), z.ncols()));
        }
        let mut x = z * &self.components;
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        Ok(x)
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        let (p, d) = self.components.shape();
        c.push(format!("{prefix}.mean"), vec![d], to_f32(&self.mean))?;
        c.push(format!("{prefix}.components"), vec![p, d], row_major_f32(&self.components))?;
        c.push(format!("{prefix}.explained_variance"), vec![p], to_f32(&self.explained_variance))?;
        Ok(())
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<PcaModel> {
        let (shape, comps) = c
            .get(&format!("{prefix}.components"))
            .ok_or_else(|| format_err!("missing {prefix}.components"))?;
        let [p, d] = shape[..] else {
            return Err(format_err!("{prefix}.components must be 2-D"));
        };
        Ok(PcaModel {
            mean: to_f64(c.expect(&format!("{prefix}.mean"), &[d])?),
            components: from_row_major(p, d, comps),
            explained_variance: to_f64(c.expect(&format!("{prefix}.explained_variance"), &[p])?),
        })
    }
}

/// Top `n_components` principal directions of `x` (rows are samples).
pub fn pca_fit(x: &DMatrix<f64>, n_components: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(arg_err!("PCA needs at least 2 samples, got {n}"));
    }
    if n_components == 0 || n_components > n.min(d) {
        return Err(arg_err!(
            "n_components = {n_components} must be in 1..={} (samples {n}, features {d})",
            n.min(d)
        ));
    }
    let mean = column_means(x);
    let centered = center(x, mean.as_slice());
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut components = DMatrix::zeros(n_components, d);
    let mut explained_variance = Vec::with_capacity(n_components);
    for (row, &k) in order.iter().take(n_components).enumerate() {
        let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
        canonical_sign(&mut v);
        components.row_mut(row).copy_from_slice(&v);
        let s = svd.singular_values[k];
        explained_variance.push(s * s / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean: mean.as_slice().to_vec(),
        components,
        explained_variance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// Overall training mean, subtracted before projecting.
    pub mean: Vec<f64>,
    /// `r x p`, unit-norm rows.
    pub projection: DMatrix<f64>,
    /// Projected class means, `k x r`.
    pub class_means: DMatrix<f64>,
    pub priors: Vec<f64>,
    /// Generalized eigenvalue (Fisher ratio) of each projection row.
    pub fisher_ratios: Vec<f64>,
    /// Ridge added to `S_w`, zero when none was needed.
    pub ridge: f64,
}

impl LdaModel {
    pub fn n_components(&self) -> usize {
        self.projection.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err!("LDA expects {} features, got {}", self.input_dim(), x.ncols()));
        }
        Ok(center(x, &self.mean) * self.projection.transpose())
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        let (r, p) = self.projection.shape();
        let k = self.priors.len();
        c.push(format!("{prefix}.mean"), vec![p], to_f32(&self.mean))?;
        c.push(format!("{prefix}.projection"), vec![r, p], row_major_f32(&self.projection))?;
        c.push(format!("{prefix}.class_means"), vec![k, r], row_major_f32(&self.class_means))?;
        c.push(format!("{prefix}.priors"), vec![k], to_f32(&self.priors))?;
        c.push(format!("{prefix}.fisher_ratios"), vec![r], to_f32(&self.fisher_ratios))?;
        c.push(format!("{prefix}.ridge"), vec![1], vec![self.ridge as f32])?;
        Ok(())
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<LdaModel> {
        let (shape, proj) = c
            .get(&format!("{prefix}.projection"))
            .ok_or_else(|| format_err!("missing {prefix}.projection"))?;
        let [r, p] = shape[..] else {
            return Err(format_err!("{prefix}.projection must be 2-D"));
        };
        let (mshape, means) = c
            .get(&format!("{prefix}.class_means"))
            .ok_or_else(|| format_err!("missing {prefix}.class_means"))?;
        let k = match mshape[..] {
            [k, rr] if rr == r => k,
            _ => return Err(format_err!("{prefix}.class_means has shape {mshape:?}")),
        };
        Ok(LdaModel {
            mean: to_f64(c.expect(&format!("{prefix}.mean"), &[p])?),
            projection: from_row_major(r, p, proj),
            class_means: from_row_major(k, r, means),
            priors: to_f64(c.expect(&format!("{prefix}.priors"), &[k])?),
            fisher_ratios: to_f64(c.expect(&format!("{prefix}.fisher_ratios"), &[r])?),
            ridge: c.expect(&format!("{prefix}.ridge"), &[1])?[0] as f64,
        })
    }
}

/// Fits LDA on rows of `x` with labels in `0..n_classes`. The output has
/// `min(k - 1, p)` dimensions, or fewer when `max_components` says so.
pub fn lda_fit(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    max_components: Option<usize>,
) -> Result<LdaModel> {
    let (n, p) = x.shape();
    if labels.len() != n {
        return Err(shape_err!("{n} rows but {} labels", labels.len()));
    }
    if n_classes < 2 {
        return Err(arg_err!("LDA needs at least 2 classes"));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| arg_err!("label {l} outside 0..{n_classes}"))? += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c < 2) {
        return Err(arg_err!("class {c} has {} samples; LDA needs at least 2", counts[c]));
    }

    let mean = column_means(x);
    let mut class_sums = DMatrix::<f64>::zeros(n_classes, p);
    for (i, &l) in labels.iter().enumerate() {
        let mut row = class_sums.row_mut(l);
        row += x.row(i);
    }
    let mut class_mean = class_sums;
    for (c, mut row) in class_mean.row_iter_mut().enumerate() {
        row /= counts[c] as f64;
    }
    // Within-class deviations A (n x p) and between-class factor B (k x p),
    // so that S_w = A'A and S_b = B'B.
    let mut a = x.clone();
    for (i, &l) in labels.iter().enumerate() {
        let mut row = a.row_mut(i);
        row -= class_mean.row(l);
    }
    let mut b = DMatrix::<f64>::zeros(n_classes, p);
    for c in 0..n_classes {
        let w = (counts[c] as f64).sqrt();
        for j in 0..p {
            b[(c, j)] = w * (class_mean[(c, j)] - mean[j]);
        }
    }

    let trace = a.norm_squared();
    let ridge_value = || {
        let r = LDA_RIDGE_SCALE * trace / p as f64;
        if r > 0.0 {
            r
        } else {
            LDA_RIDGE_SCALE
        }
    };
    let b_t = b.transpose();
    let (w, ridge) = if p <= n {
        let s_w = a.transpose() * &a;
        let eig = s_w.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        let ridge = if cond > LDA_CONDITION_LIMIT { ridge_value() } else { 0.0 };
        let mut reg = s_w;
        for j in 0..p {
            reg[(j, j)] += ridge;
        }
        let chol = Cholesky::new(reg).ok_or_else(|| arg_err!("within-class scatter is not positive definite"))?;
        (chol.solve(&b_t), ridge)
    } else {
        // More features than samples: S_w is singular. Apply
        // (ridge I + A'A)^-1 through the n x n Gram matrix (Woodbury).
        let ridge = ridge_value();
        let mut gram = &a * a.transpose();
        for i in 0..n {
            gram[(i, i)] += ridge;
        }
        let chol = Cholesky::new(gram).ok_or_else(|| arg_err!("regularized Gram matrix is not positive definite"))?;
        let inner = chol.solve(&(&a * &b_t));
        ((&b_t - a.transpose() * inner) / ridge, ridge)
    };
    if ridge > 0.0 {
        log::warn!("within-class scatter is singular or ill-conditioned; added ridge {ridge:.3e}");
    }

    let mut g = &b * &w;
    g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut r = (n_classes - 1).min(p);
    if let Some(m) = max_components {
        r = r.min(m.max(1));
    }
    let mut projection = DMatrix::<f64>::zeros(r, p);
    let mut fisher_ratios = Vec::with_capacity(r);
    for (row, &k) in order.iter().take(r).enumerate() {
        let theta = eig.eigenvalues[k];
        let mut v: Vec<f64> = (&w * eig.eigenvectors.column(k)).iter().copied().collect();
        if theta <= f64::EPSILON * eig.eigenvalues.amax() {
            log::warn!("LDA direction {row} carries no between-class variance");
        }
        // Unit length keeps projected features in input units; whitening
        // against a ridged, near-singular S_w inflates them without bound.
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= norm);
        canonical_sign(&mut v);
        projection.row_mut(row).copy_from_slice(&v);
        fisher_ratios.push(theta.max(0.0));
    }

    let centered_means = center(&class_mean, mean.as_slice());
    let class_means = centered_means * projection.transpose();
    Ok(LdaModel {
        mean: mean.as_slice().to_vec(),
        projection,
        class_means,
        priors: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        fisher_ratios,
        ridge,
    })
}

pub(crate) fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub(crate) fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub(crate) fn row_major_f32(m: &DMatrix<f64>) -> Vec<f32> {
    m.transpose().iter().map(|&x| x as f32).collect()
}

pub(crate) fn from_row_major(rows: usize, cols: usize, v: &[f32]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, v.iter().map(|&x| x as f64))
}
