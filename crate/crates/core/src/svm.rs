//! One-vs-rest linear SVM trained by dual coordinate descent.
//!
//! Each binary problem is the L2-regularized hinge-loss SVM with the bias
//! folded into the weight vector through a constant feature of 1:
//!
//! ```text
//! primal  P(w) = 1/2 |w|^2 + C * sum_i max(0, 1 - y_i w'x_i)
//! dual    D(a) = sum_i a_i - 1/2 |sum_i a_i y_i x_i|^2,   0 <= a_i <= C
//! ```
//!
//! Coordinates are visited in a seeded random order each epoch; training
//! stops once the duality gap `P - D` falls below `tolerance * |P|`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::container::Container;
use crate::error::{arg_err, format_err, shape_err, Result};
use crate::reduce::{from_row_major, row_major_f32, to_f32, to_f64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 10_000,
            seed: 333,
        }
    }
}

/// Result of one binary solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub epochs: usize,
    pub converged: bool,
}

impl BinarySolution {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }
}

fn dot_aug(w: &[f64], x: &[f64]) -> f64 {
    // last entry of w is the bias, paired with the implicit constant feature
    let d = x.len();
    w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
}

fn objectives(rows: &[&[f64]], y: &[f64], w: &[f64], alpha: &[f64], c: f64) -> (f64, f64) {
    let half_norm = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = rows
        .iter()
        .zip(y)
        .map(|(x, &yi)| (1.0 - yi * dot_aug(w, x)).max(0.0))
        .sum();
    (half_norm + c * hinge, alpha.iter().sum::<f64>() - half_norm)
}

/// Solves one binary problem; `y` entries must be `+1` or `-1`.
pub fn solve_binary(rows: &[&[f64]], y: &[f64], params: &SvmParams, seed: u64) -> Result<BinarySolution> {
    let n = rows.len();
    if n == 0 || y.len() != n {
        return Err(arg_err!("binary SVM needs matching non-empty rows and labels"));
    }
    if !(params.c > 0.0) || !params.c.is_finite() {
        return Err(arg_err!("C must be positive and finite"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(shape_err!("rows differ in length"));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(arg_err!("SVM input contains non-finite values"));
    }
    let c = params.c;
    let q_diag: Vec<f64> = rows.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (mut primal, mut dual) = objectives(rows, y, &w, &alpha, c);
    let mut epochs = 0;
    let mut converged = false;
    while epochs < params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = rows[i];
            let g = y[i] * dot_aug(&w, x) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
            let step = (alpha[i] - old) * y[i];
            if step != 0.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += step * xj;
                }
                w[d] += step;
            }
        }
        epochs += 1;
        (primal, dual) = objectives(rows, y, &w, &alpha, c);
        if primal - dual <= params.tolerance * primal.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "SVM did not converge in {} epochs: duality gap {:.3e} (primal {:.6e})",
            params.max_epochs,
            primal - dual,
            primal
        );
    }
    let bias = w.pop().unwrap();
    Ok(BinarySolution {
        weights: w,
        bias,
        alpha,
        primal,
        dual,
        epochs,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// `k x dim`, one row per class.
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub params: SvmParams,
}

/// Fitted model plus the per-class solver outcomes.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    pub solutions: Vec<BinarySolution>,
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn svm_fit(x: &DMatrix<f64>, labels: &[usize], n_classes: usize, params: &SvmParams) -> Result<SvmFit> {
    if n_classes < 2 {
        return Err(arg_err!("SVM needs at least 2 classes"));
    }
    if labels.len() != x.nrows() {
        return Err(shape_err!("{} rows but {} labels", x.nrows(), labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(arg_err!("label {l} outside 0..{n_classes}"));
    }
    let owned = rows_of(x);
    let rows: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
    let solutions = (0..n_classes)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            solve_binary(&rows, &y, params, params.seed.wrapping_add(k as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = x.ncols();
    let mut weights = DMatrix::zeros(n_classes, dim);
    for (k, s) in solutions.iter().enumerate() {
        weights.row_mut(k).copy_from_slice(&s.weights);
    }
    Ok(SvmFit {
        model: SvmModel {
            weights,
            bias: solutions.iter().map(|s| s.bias).collect(),
            params: *params,
        },
        solutions,
    })
}

impl SvmModel {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// `n x k` scores `w_k'x + b_k`.
    pub fn decision(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(shape_err!("SVM expects {} features, got {}", self.dim(), x.ncols()));
        }
        let mut s = x * self.weights.transpose();
        for (k, mut col) in s.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[k]);
        }
        Ok(s)
    }

    /// Argmax of the scores; ties go to the lower class id.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let s = self.decision(x)?;
        Ok(s.row_iter()
            .map(|r| {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    pub fn write_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        let (k, d) = self.weights.shape();
        c.push(format!("{prefix}.weights"), vec![k, d], row_major_f32(&self.weights))?;
        c.push(format!("{prefix}.bias"), vec![k], to_f32(&self.bias))?;
        c.push(
            format!("{prefix}.params"),
            vec![3],
            vec![self.params.c as f32, self.params.tolerance as f32, self.params.max_epochs as f32],
        )?;
        c.set_meta(format!("{prefix}.seed"), self.params.seed.to_string());
        Ok(())
    }

    pub fn read_from(c: &Container, prefix: &str) -> Result<SvmModel> {
        let (shape, w) = c
            .get(&format!("{prefix}.weights"))
            .ok_or_else(|| format_err!("missing {prefix}.weights"))?;
        let [k, d] = shape[..] else {
            return Err(format_err!("{prefix}.weights must be 2-D"));
        };
        let p = c.expect(&format!("{prefix}.params"), &[3])?;
        let seed = c
            .meta(&format!("{prefix}.seed"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err!("missing {prefix}.seed"))?;
        if !(p[2] >= 0.0) || !p[2].is_finite() {
            return Err(format_err!("bad SVM epoch limit {}", p[2]));
        }
        Ok(SvmModel {
            weights: from_row_major(k, d, w),
            bias: to_f64(c.expect(&format!("{prefix}.bias"), &[k])?),
            params: SvmParams {
                c: p[0] as f64,
                tolerance: p[1] as f64,
                max_epochs: p[2] as usize,
                seed,
            },
        })
    }
}
