//! Helpers shared by the integration suites. Everything numeric here is
//! written from scratch so it can serve as an oracle for the library.

#![allow(dead_code)]

pub mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbff::fusion::FeatureMatrix;
use rbff::graph::{Network, Tap, TapSite, BLOCK_COUNT};
use rbff::preprocess::{InputImage, Preprocessing};
use rbff::tensor::Tensor;

pub fn random_image(seed: u64, size: usize) -> InputImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::from_fn(size, size, 3, |_, _, _| rng.gen_range(-1.0..1.0));
    InputImage::from_tensor(t, Preprocessing::with_size(size)).unwrap()
}

pub fn random_images(n: usize, size: usize, seed: u64) -> Vec<InputImage> {
    (0..n as u64).map(|i| random_image(seed * 1000 + i, size)).collect()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Fraction of strictly positive elements, by walking every index.
pub fn positive_fraction(t: &Tensor) -> f64 {
    let mut positive = 0usize;
    for y in 0..t.height() {
        for x in 0..t.width() {
            for c in 0..t.channels() {
                if t.at(y, x, c) > 0.0 {
                    positive += 1;
                }
            }
        }
    }
    positive as f64 / (t.height() * t.width() * t.channels()) as f64
}

/// `(z_prev, z_next, alpha)` for every block, enumerated from raw taps.
pub fn significance_oracle(net: &Network, images: &[InputImage]) -> Vec<(f64, f64, f64)> {
    let taps: Vec<Tap> = (1..=BLOCK_COUNT)
        .flat_map(|b| [Tap::new(b, TapSite::PreRelu), Tap::new(b, TapSite::PostRelu)])
        .collect();
    let mut zp = [0.0f64; BLOCK_COUNT];
    let mut zn = [0.0f64; BLOCK_COUNT];
    for img in images {
        let out = net.forward(img, &taps).unwrap();
        for b in 1..=BLOCK_COUNT {
            zp[b - 1] += 1.0 - positive_fraction(&out[&Tap::new(b, TapSite::PreRelu)]);
            zn[b - 1] += 1.0 - positive_fraction(&out[&Tap::new(b, TapSite::PostRelu)]);
        }
    }
    let n = images.len() as f64;
    (0..BLOCK_COUNT)
        .map(|i| {
            let (p, q) = (zp[i] / n, zn[i] / n);
            (p, q, if q == 0.0 { f64::INFINITY } else { p / q })
        })
        .collect()
}

/// Selection sort by descending alpha, ties to the lower block index.
pub fn sort_oracle(alphas: &[(usize, f64)]) -> Vec<usize> {
    let mut left: Vec<(usize, f64)> = alphas.to_vec();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (bi, ba) = left[best];
            let (ci, ca) = left[i];
            if ca > ba || (ca == ba && ci < bi) {
                best = i;
            }
        }
        out.push(left.remove(best).0);
    }
    out
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with matching column eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (values, vectors)
}

pub fn column(m: &[Vec<f64>], j: usize) -> Vec<f64> {
    m.iter().map(|r| r[j]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean_rows(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x[0].len()).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// Sample covariance with divisor `n - 1`.
pub fn covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mu = mean_rows(x);
    let p = mu.len();
    let mut c = vec![vec![0.0; p]; p];
    for r in x {
        for i in 0..p {
            for j in 0..p {
                c[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    let d = (x.len() - 1) as f64;
    c.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v /= d));
    c
}

/// Within- and between-class scatter matrices.
pub fn scatter(x: &[Vec<f64>], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let p = x[0].len();
    let mu = mean_rows(x);
    let mut sw = vec![vec![0.0; p]; p];
    let mut sb = vec![vec![0.0; p]; p];
    for c in 0..k {
        let rows: Vec<Vec<f64>> = x.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r.clone()).collect();
        let mc = mean_rows(&rows);
        for r in &rows {
            for i in 0..p {
                for j in 0..p {
                    sw[i][j] += (r[i] - mc[i]) * (r[j] - mc[j]);
                }
            }
        }
        let nc = rows.len() as f64;
        for i in 0..p {
            for j in 0..p {
                sb[i][j] += nc * (mc[i] - mu[i]) * (mc[j] - mu[j]);
            }
        }
    }
    (sw, sb)
}

/// Inverse through Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..p).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Generalized symmetric eigenvalues of `S_b v = theta S_w v`, descending,
/// via the Cholesky-free symmetric form `S_w^-1/2 S_b S_w^-1/2`.
pub fn generalized_eigenvalues(sb: &[Vec<f64>], sw: &[Vec<f64>]) -> Vec<f64> {
    let (w_vals, w_vecs) = jacobi_eigen(sw);
    let n = sw.len();
    // S_w^-1/2 = V diag(1/sqrt(l)) V'
    let mut inv_sqrt = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            inv_sqrt[i][j] = (0..n).map(|k| w_vecs[i][k] * w_vecs[j][k] / w_vals[k].sqrt()).sum();
        }
    }
    let m = matmul(&matmul(&inv_sqrt, sb), &inv_sqrt);
    let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (m[i][j] + m[j][i])).collect()).collect();
    jacobi_eigen(&sym).0
}

/// Zero-mean, unit-variance uniform noise.
fn noise(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-3f64.sqrt()..3f64.sqrt())
}

/// Features for blocks 3, 6, 13, 16 with their real widths, where every
/// channel of block `b` carries a class-dependent shift of `strength[b]`.
pub fn layered_features(per_class: usize, strength: [f64; 4], seed: u64) -> FeatureMatrix {
    let dims = [144, 192, 576, 960];
    let k = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dims.iter().sum::<usize>()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect())
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * k {
        let c = i % k;
        let mut j = 0;
        for (b, &d) in dims.iter().enumerate() {
            for _ in 0..d {
                data.push((strength[b] * signs[c][j] + noise(&mut rng)) as f32);
                j += 1;
            }
        }
        labels.push(c);
    }
    FeatureMatrix::new(
        vec![3, 6, 13, 16],
        dims.to_vec(),
        data,
        labels,
        vec!["a".into(), "b".into(), "c".into()],
    )
    .unwrap()
}

/// Three Gaussian-like clusters `sep` noise widths apart, under block 3's
/// 144 columns.
pub fn clustered_features(per_class: usize, sep: f64, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 3 {
        let c = i % 3;
        for j in 0..144 {
            let center = if j == c { sep } else { 0.0 };
            data.push((center + noise(&mut rng)) as f32);
        }
        labels.push(c);
    }
    FeatureMatrix::new(vec![3], vec![144], data, labels, vec!["a".into(), "b".into(), "c".into()]).unwrap()
}
