//! Image augmentations: scale, rotate, blur, brightness and transpose.
//!
//! All operate on single-image tensors `[1, C, H, W]` with values in
//! `[0, 1]` and keep shape and range.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub scale: bool,
    pub rotate: bool,
    pub blur: bool,
    pub brightness: bool,
    pub transpose: bool,
    /// Scale factor range.
    pub scale_range: (f64, f64),
    /// Maximum absolute rotation in degrees.
    pub max_degrees: f64,
    /// Upper bound of the Gaussian blur σ.
    pub max_sigma: f64,
    pub brightness_range: (f64, f64),
    pub transpose_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale: true,
            rotate: true,
            blur: true,
            brightness: true,
            transpose: true,
            scale_range: (0.9, 1.1),
            max_degrees: 10.0,
            max_sigma: 1.0,
            brightness_range: (0.8, 1.2),
            transpose_p: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            scale: false,
            rotate: false,
            blur: false,
            brightness: false,
            transpose: false,
            ..Self::default()
        }
    }

    pub fn any(&self) -> bool {
        self.scale || self.rotate || self.blur || self.brightness || self.transpose
    }
}

fn check_single(img: &Tensor<f32>, op: &'static str) -> Result<()> {
    if img.shape().n() != 1 {
        return Err(Error::Shape(format!("{op} expects one image, got {}", img.shape())));
    }
    Ok(())
}

/// Random composition of the enabled transforms.
pub fn augment<R: Rng>(img: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor<f32>> {
    check_single(img, "augment")?;
    let s = img.shape();
    if cfg.transpose && s.h() != s.w() {
        return Err(Error::Shape(format!(
            "transpose needs a square image, got {}x{}",
            s.h(),
            s.w()
        )));
    }
    let mut out = img.clone();
    if cfg.scale || cfg.rotate {
        let scale = if cfg.scale {
            rng.random_range(cfg.scale_range.0..=cfg.scale_range.1)
        } else {
            1.0
        };
        let degrees = if cfg.rotate {
            rng.random_range(-cfg.max_degrees..=cfg.max_degrees)
        } else {
            0.0
        };
        out = affine(&out, scale, degrees)?;
    }
    if cfg.blur {
        let sigma = rng.random_range(0.0..=cfg.max_sigma);
        out = gaussian_blur(&out, sigma)?;
    }
    if cfg.brightness {
        let f = rng.random_range(cfg.brightness_range.0..=cfg.brightness_range.1);
        out = adjust_brightness(&out, f);
    }
    if cfg.transpose && rng.random_bool(cfg.transpose_p) {
        out = transpose(&out)?;
    }
    Ok(out)
}

/// Scales by `scale` and rotates by `degrees` about the image centre,
/// sampling bilinearly with zero fill outside the source.
pub fn affine(img: &Tensor<f32>, scale: f64, degrees: f64) -> Result<Tensor<f32>> {
    check_single(img, "affine")?;
    if !(scale > 0.0) {
        return Err(Error::Argument(format!("scale must be positive, got {scale}")));
    }
    let [_, c, h, w] = img.shape().0;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // inverse map: rotate by −θ, then divide by the scale
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sx = (cos * dx + sin * dy) / scale + cx;
                let sy = (-sin * dx + cos * dy) / scale + cy;
                dst[y * w + x] = bilinear(plane, h, w, sy, sx);
            }
        }
    }
    Tensor::from_vec(img.shape(), out)
}

fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + at(y0, x0 + 1.0) * (1.0 - fy) * fx
        + at(y0 + 1.0, x0) * fy * (1.0 - fx)
        + at(y0 + 1.0, x0 + 1.0) * fy * fx;
    v as f32
}

/// Separable Gaussian blur with radius ⌈3σ⌉ and clamped borders. σ below
/// 1e-3 returns the input unchanged.
pub fn gaussian_blur(img: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>> {
    check_single(img, "gaussian_blur")?;
    if sigma < 1e-3 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);

    let [_, c, h, w] = img.shape().0;
    let src = img.data();
    let mut tmp = vec![0.0f64; src.len()];
    let mut out = vec![0.0f32; src.len()];
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    for ch in 0..c {
        let off = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[off + y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * src[off + y * w + clamp(x as isize + j as isize - radius, w)] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * tmp[off + clamp(y as isize + j as isize - radius, h) * w + x])
                    .sum();
                out[off + y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::from_vec(img.shape(), out)
}

/// Multiplies by `factor` and clamps to `[0, 1]`.
pub fn adjust_brightness(img: &Tensor<f32>, factor: f64) -> Tensor<f32> {
    let data = img
        .data()
        .iter()
        .map(|&v| (v as f64 * factor).clamp(0.0, 1.0) as f32)
        .collect();
    Tensor::from_vec(img.shape(), data).expect("same shape")
}

/// Swaps the H and W axes.
pub fn transpose(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    check_single(img, "transpose")?;
    let [_, c, h, w] = img.shape().0;
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        let off = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                out[off + x * h + y] = src[off + y * w + x];
            }
        }
    }
    Tensor::from_vec(Shape::new(1, c, w, h), out)
}
