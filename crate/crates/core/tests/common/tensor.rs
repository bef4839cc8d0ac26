//! Brute-force loop oracles for the tensor kernels.
//!
//! The oracles pad explicitly into a zero-filled f64 buffer and loop over
//! every output element, so they share no indexing code with the kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbff::tensor::{
    batch_norm, conv2d, depthwise_conv2d, global_average_pool, BnParams, ConvKernel, DepthwiseKernel, Padding, Tensor,
};

pub const CASES: usize = 200;
pub const TOL: f64 = 1e-6;

struct Case {
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: Padding,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    loop {
        let case = Case {
            h: rng.gen_range(1..=8),
            w: rng.gen_range(1..=8),
            c_in: rng.gen_range(1..=8),
            c_out: rng.gen_range(1..=8),
            k: rng.gen_range(1..=3),
            stride: rng.gen_range(1..=2),
            padding: if rng.gen_bool(0.7) { Padding::Same } else { Padding::Valid },
        };
        if case.padding == Padding::Same || (case.k <= case.h && case.k <= case.w) {
            return case;
        }
    }
}

fn random_values(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    // a share of exact zeros exercises the zero-skipping fast path
    (0..n)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-scale..scale) })
        .collect()
}

/// Output size and leading pad, written out from the definition.
fn oracle_geometry(size: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((size - k) / stride + 1, 0),
        Padding::Same => {
            let out = size.div_ceil(stride);
            let needed = (out - 1) * stride + k;
            let total = needed.saturating_sub(size);
            (out, total / 2)
        }
    }
}

/// Zero-padded copy of the input as a `[y][x][c]` f64 array.
fn padded(t: &Tensor, pad_top: usize, pad_left: usize, ph: usize, pw: usize) -> Vec<Vec<Vec<f64>>> {
    let mut buf = vec![vec![vec![0.0; t.channels()]; pw]; ph];
    for y in 0..t.height() {
        for x in 0..t.width() {
            for c in 0..t.channels() {
                if y + pad_top < ph && x + pad_left < pw {
                    buf[y + pad_top][x + pad_left][c] = t.at(y, x, c) as f64;
                }
            }
        }
    }
    buf
}

fn oracle_conv(t: &Tensor, k: &ConvKernel, case: &Case, depthwise: Option<&DepthwiseKernel>) -> Vec<f64> {
    let (oh, pt) = oracle_geometry(case.h, case.k, case.stride, case.padding);
    let (ow, pl) = oracle_geometry(case.w, case.k, case.stride, case.padding);
    let ph = (oh - 1) * case.stride + case.k;
    let pw = (ow - 1) * case.stride + case.k;
    let buf = padded(t, pt, pl, ph.max(case.h + pt), pw.max(case.w + pl));
    let c_out = if depthwise.is_some() { case.c_in } else { case.c_out };
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..c_out {
                let mut s = 0.0;
                for ky in 0..case.k {
                    for kx in 0..case.k {
                        let px = &buf[oy * case.stride + ky][ox * case.stride + kx];
                        match depthwise {
                            Some(d) => s += px[co] * d.at(ky, kx, co) as f64,
                            None => {
                                for (ci, &v) in px.iter().enumerate() {
                                    s += v * k.at(ky, kx, ci, co) as f64;
                                }
                            }
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

fn max_diff(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter().zip(want).map(|(&g, &w)| (g as f64 - w).abs()).fold(0.0, f64::max)
}

/// Largest deviation from the oracle over `cases` random cases.
pub fn conv2d_error(seed: u64, cases: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let case = random_case(&mut rng);
        let input = Tensor::new(case.h, case.w, case.c_in, random_values(&mut rng, case.h * case.w * case.c_in, 1.0)).unwrap();
        let fan_in = (case.k * case.k * case.c_in) as f32;
        let kv = random_values(&mut rng, case.k * case.k * case.c_in * case.c_out, 2.0 / fan_in.sqrt());
        let kernel = ConvKernel::new(case.k, case.k, case.c_in, case.c_out, kv).unwrap();
        let got = conv2d(&input, &kernel, case.stride, case.padding).unwrap();
        let want = oracle_conv(&input, &kernel, &case, None);
        worst = worst.max(max_diff(got.data(), &want));
    }
    worst
}

/// Largest deviation from the oracle over `cases` random cases.
pub fn depthwise_error(seed: u64, cases: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dummy = ConvKernel::new(1, 1, 1, 1, vec![0.0]).unwrap();
    for _ in 0..cases {
        let case = random_case(&mut rng);
        let input = Tensor::new(case.h, case.w, case.c_in, random_values(&mut rng, case.h * case.w * case.c_in, 1.0)).unwrap();
        let kv = random_values(&mut rng, case.k * case.k * case.c_in, 1.0);
        let kernel = DepthwiseKernel::new(case.k, case.k, case.c_in, kv).unwrap();
        let got = depthwise_conv2d(&input, &kernel, case.stride, case.padding).unwrap();
        let want = oracle_conv(&input, &dummy, &case, Some(&kernel));
        worst = worst.max(max_diff(got.data(), &want));
    }
    worst
}

/// Largest deviation from the oracle over `cases` random cases.
pub fn batch_norm_error(seed: u64, cases: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        let case = random_case(&mut rng);
        let c = case.c_in;
        let input = Tensor::new(case.h, case.w, c, random_values(&mut rng, case.h * case.w * c, 3.0)).unwrap();
        let gamma: Vec<f32> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let beta: Vec<f32> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean: Vec<f32> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var: Vec<f32> = (0..c).map(|_| rng.gen_range(0.1..4.0)).collect();
        let eps = [0.0, 1e-5, 1e-3][i % 3];
        let bn = BnParams::new(gamma.clone(), beta.clone(), mean.clone(), var.clone(), eps).unwrap();
        let got = batch_norm(&input, &bn).unwrap();
        let mut want = Vec::new();
        for y in 0..case.h {
            for x in 0..case.w {
                for ch in 0..c {
                    let v = input.at(y, x, ch) as f64;
                    let denom = (var[ch] as f64 + eps as f64).sqrt();
                    want.push(gamma[ch] as f64 * (v - mean[ch] as f64) / denom + beta[ch] as f64);
                }
            }
        }
        worst = worst.max(max_diff(got.data(), &want));
    }
    worst
}

/// Largest deviation from the oracle over `cases` random cases.
pub fn gap_error(seed: u64, cases: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let case = random_case(&mut rng);
        let input = Tensor::new(case.h, case.w, case.c_in, random_values(&mut rng, case.h * case.w * case.c_in, 6.0)).unwrap();
        let got = global_average_pool(&input);
        let want: Vec<f64> = (0..case.c_in)
            .map(|c| {
                let mut s = 0.0;
                for y in 0..case.h {
                    for x in 0..case.w {
                        s += input.at(y, x, c) as f64;
                    }
                }
                s / (case.h * case.w) as f64
            })
            .collect();
        worst = worst.max(max_diff(&got, &want));
    }
    worst
}
