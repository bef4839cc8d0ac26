//! Image decoding, resizing and input scaling.
//!
//! Resizing is bilinear with half-pixel centers (`align_corners = false`)
//! and no antialiasing: output pixel `i` samples source coordinate
//! `(i + 0.5) * in / out - 0.5`, clamped to the image. Pixel values are then
//! mapped `v -> v / 127.5 - 1` into `[-1, 1]`.

use std::fmt;
use std::path::Path;

use image::RgbImage;

use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

/// Identifier of the scaling rule stored in weight containers.
pub const SCALE_ID: &str = "mobilenet_v2/tf";
pub const DEFAULT_INPUT_SIZE: usize = 224;

/// How raw images are turned into network inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocessing {
    pub scale_id: String,
    pub size: usize,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            scale_id: SCALE_ID.to_string(),
            size: DEFAULT_INPUT_SIZE,
        }
    }
}

impl Preprocessing {
    pub fn with_size(size: usize) -> Self {
        Preprocessing {
            size,
            ..Default::default()
        }
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.scale_id, self.size)
    }
}

/// A preprocessed `size x size x 3` tensor tagged with how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct InputImage {
    tensor: Tensor,
    preprocessing: Preprocessing,
}

impl InputImage {
    /// Wraps an already-scaled tensor. The caller vouches for `preprocessing`.
    pub fn from_tensor(tensor: Tensor, preprocessing: Preprocessing) -> Result<Self> {
        if tensor.shape() != (preprocessing.size, preprocessing.size, 3) {
            return Err(arg_err!(
                "input tensor {:?} does not match {} (expected {}x{}x3)",
                tensor.shape(),
                preprocessing,
                preprocessing.size,
                preprocessing.size
            ));
        }
        Ok(InputImage {
            tensor,
            preprocessing,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }
}

pub fn resize_bilinear(src: &RgbImage, out_h: usize, out_w: usize) -> Vec<[f32; 3]> {
    let (in_w, in_h) = (src.width() as usize, src.height() as usize);
    let axis = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let pos = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, (pos - lo as f64).min(1.0) as f32)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, in_w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, in_h, out_h);
        for &(x0, x1, fx) in &cols {
            let p = |yy: usize, xx: usize| src.get_pixel(xx as u32, yy as u32).0;
            let (a, b, c, d) = (p(y0, x0), p(y0, x1), p(y1, x0), p(y1, x1));
            let mut px = [0f32; 3];
            for k in 0..3 {
                let top = a[k] as f32 * (1.0 - fx) + b[k] as f32 * fx;
                let bot = c[k] as f32 * (1.0 - fx) + d[k] as f32 * fx;
                px[k] = top * (1.0 - fy) + bot * fy;
            }
            out.push(px);
        }
    }
    out
}

pub fn preprocess_rgb(img: &RgbImage, preprocessing: &Preprocessing) -> Result<InputImage> {
    if img.width() == 0 || img.height() == 0 {
        return Err(arg_err!("image has zero size"));
    }
    let size = preprocessing.size;
    let pixels = resize_bilinear(img, size, size);
    let data = pixels
        .iter()
        .flat_map(|px| px.iter().map(|&v| v / 127.5 - 1.0))
        .collect();
    InputImage::from_tensor(Tensor::new(size, size, 3, data)?, preprocessing.clone())
}

pub fn preprocess_file(path: &Path, preprocessing: &Preprocessing) -> Result<InputImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    preprocess_rgb(&img.to_rgb8(), preprocessing)
}

/// Decodes an in-memory PNG/JPEG/TIFF/BMP, sniffing the format from its header.
pub fn preprocess_bytes(bytes: &[u8], preprocessing: &Preprocessing) -> Result<InputImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    preprocess_rgb(&img.to_rgb8(), preprocessing)
}
