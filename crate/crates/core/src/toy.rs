//! Synthetic weight containers for tests, demos and the acceptance suite.
//!
//! The toy network has the full MobileNetV2 topology with seeded random
//! weights. It is usable at small input sizes (anything >= 32 keeps every
//! stage non-empty), which keeps forward passes cheap.

use std::f32::consts::TAU;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{new_weights_container, parameter_layout, Depth, WeightContainer};
use crate::preprocess::Preprocessing;

pub const TOY_SEED: u64 = 20_210_917;
pub const TOY_INPUT_SIZE: usize = 64;

/// Full-depth container with seeded random weights.
///
/// Kernels are He-uniform over their fan-in (halved variance for the linear
/// projections); BN statistics are drawn near the identity so activations
/// stay in a sensible range without calibration.
pub fn toy_weights(seed: u64, input_size: usize) -> Result<WeightContainer> {
    let preprocessing = Preprocessing::with_size(input_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = new_weights_container(&format!("toy:{seed}"), &preprocessing, Depth::FULL);
    for (name, shape) in parameter_layout(Depth::FULL) {
        let n: usize = shape.iter().product();
        let mut uniform = |lo: f32, hi: f32| -> Vec<f32> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
        let values = if name.ends_with("kernel") {
            // [kh, kw, c_in, c_out] or depthwise [kh, kw, c]
            let fan_in = if name.ends_with("depthwise_kernel") {
                shape[0] * shape[1]
            } else {
                shape[0] * shape[1] * shape[2]
            } as f32;
            let gain = if name.contains("project") { 3.0 } else { 6.0 };
            let a = (gain / fan_in).sqrt();
            uniform(-a, a)
        } else if name.ends_with("gamma") {
            uniform(0.8, 1.2)
        } else if name.ends_with("beta") {
            uniform(-0.3, 0.3)
        } else if name.ends_with("moving_mean") {
            uniform(-0.1, 0.1)
        } else {
            uniform(0.8, 1.2)
        };
        c.push(name, shape, values)?;
    }
    WeightContainer::from_container(c)
}

/// Container with correct names and shapes but placeholder values: zero
/// kernels and identity BN. Useful for shape and size accounting.
pub fn shape_only_weights(depth: Depth, preprocessing: &Preprocessing) -> Result<WeightContainer> {
    let mut c = new_weights_container("shape-only", preprocessing, depth);
    for (name, shape) in parameter_layout(depth) {
        let n: usize = shape.iter().product();
        let fill = if name.ends_with("gamma") || name.ends_with("moving_variance") {
            1.0
        } else {
            0.0
        };
        c.push(name, shape, vec![fill; n])?;
    }
    WeightContainer::from_container(c)
}

/// Class names of the synthetic texture dataset.
pub const TEXTURE_CLASSES: [&str; 3] = ["checker", "stripes_h", "stripes_v"];

/// One noisy texture image. Period, phase and tint vary per image.
pub fn texture_image(class: usize, size: u32, rng: &mut impl Rng) -> RgbImage {
    let period = rng.gen_range(5.0f32..9.0);
    let (px, py) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
    let tint: [f32; 3] = [rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2), rng.gen_range(0.8..1.2)];
    let mut img = RgbImage::new(size, size);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let (fx, fy) = (TAU * x as f32 / period + px, TAU * y as f32 / period + py);
        let s = match class % 3 {
            0 => fx.sin() * fy.sin(),
            1 => fy.sin(),
            _ => fx.sin(),
        };
        let mut rgb = [0u8; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let v = 128.0 + 90.0 * s * tint[c] + rng.gen_range(-12.0..12.0);
            *out = v.clamp(0.0, 255.0) as u8;
        }
        *p = Rgb(rgb);
    }
    img
}

/// Writes `root/<class>/<class>_<i>.png` for the three texture classes.
pub fn write_texture_dataset(root: &Path, per_class: usize, size: u32, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (id, name) in TEXTURE_CLASSES.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let path = dir.join(format!("{name}_{i:03}.png"));
            texture_image(id, size, &mut rng)
                .save(&path)
                .map_err(|e| Error::Decode {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
    }
    Ok(())
}
