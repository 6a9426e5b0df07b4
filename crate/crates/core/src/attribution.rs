//! Integrated Gradients attribution of a class logit to input pixels, with
//! heatmap rendering and a raw map format.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::StenosisClass;
use crate::model::Model;
use crate::preprocess::CleanImage;
use crate::tensor::{BnMode, Real, Shape, Tensor};

/// A scalar-per-class function of an image batch whose input gradient is
/// available.
pub trait Attributable<T: Real> {
    /// Target logit of every sample in `batch` and its gradient with respect
    /// to the batch.
    fn target_logits_and_grad(&self, batch: &Tensor<T>, target: usize) -> Result<(Vec<f64>, Tensor<T>)>;
}

impl<T: Real> Attributable<T> for Model<T> {
    fn target_logits_and_grad(&self, batch: &Tensor<T>, target: usize) -> Result<(Vec<f64>, Tensor<T>)> {
        let (logits, cache) = self.forward(batch, BnMode::Eval)?;
        let k = logits.shape().c();
        if target >= k {
            return Err(Error::Label {
                label: target,
                classes: k,
            });
        }
        let n = batch.shape().n();
        let mut seed = Tensor::zeros(logits.shape());
        for i in 0..n {
            seed.data_mut()[i * k + target] = T::one();
        }
        let (grad, _) = self.backward(&cache, &seed)?;
        let values = (0..n).map(|i| logits.data()[i * k + target].f64()).collect();
        Ok((values, grad))
    }
}

/// Signed per-pixel attribution (channels summed) with its completeness gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub target: StenosisClass,
    pub baseline: String,
    pub steps: usize,
    /// `F(x) − F(x')` for the target logit.
    pub logit_difference: f64,
    /// `|Σ IG − (F(x) − F(x'))|`.
    pub completeness_gap: f64,
}

impl AttributionMap {
    pub fn relative_gap(&self) -> f64 {
        self.completeness_gap / self.logit_difference.abs()
    }
}

/// Path points per forward/backward batch.
const CHUNK: usize = 32;

/// Right-Riemann Integrated Gradients along the straight path from
/// `baseline` to `image` (both `[1, C, H, W]`).
pub fn integrated_gradients<T: Real, F: Attributable<T>>(
    f: &F,
    image: &Tensor<T>,
    target: StenosisClass,
    baseline: &Tensor<T>,
    baseline_name: &str,
    steps: usize,
) -> Result<AttributionMap> {
    if steps == 0 {
        return Err(Error::Argument("integrated gradients needs at least one step".into()));
    }
    let s = image.shape();
    if s.n() != 1 || baseline.shape() != s {
        return Err(Error::dim(
            "integrated_gradients",
            format!("image {s} and baseline {} must match with N = 1", baseline.shape()),
        ));
    }
    let len = s.sample_len();
    let (x, x0) = (image.data(), baseline.data());
    let mut grad_sum = vec![0.0f64; len];
    for start in (1..=steps).step_by(CHUNK) {
        let ks: Vec<usize> = (start..=(start + CHUNK - 1).min(steps)).collect();
        let mut data = Vec::with_capacity(ks.len() * len);
        for &k in &ks {
            let a = T::of(k as f64 / steps as f64);
            data.extend(x0.iter().zip(x).map(|(&b, &v)| b + a * (v - b)));
        }
        let batch = Tensor::from_vec(Shape::new(ks.len(), s.c(), s.h(), s.w()), data)?;
        let (_, grad) = f.target_logits_and_grad(&batch, target.index())?;
        for row in grad.data().chunks(len) {
            for (acc, &g) in grad_sum.iter_mut().zip(row) {
                *acc += g.f64();
            }
        }
    }
    let ends = Tensor::stack(&[image.clone(), baseline.clone()])?;
    let (logits, _) = f.target_logits_and_grad(&ends, target.index())?;
    let diff = logits[0] - logits[1];

    let plane = s.h() * s.w();
    let mut values = vec![0.0f64; plane];
    let mut total = 0.0;
    for i in 0..len {
        let ig = (x[i].f64() - x0[i].f64()) * grad_sum[i] / steps as f64;
        values[i % plane] += ig;
        total += ig;
    }
    Ok(AttributionMap {
        height: s.h(),
        width: s.w(),
        values,
        target,
        baseline: baseline_name.to_string(),
        steps,
        logit_difference: diff,
        completeness_gap: (total - diff).abs(),
    })
}

/// All-zeros baseline of the image's shape.
pub fn black_baseline<T: Real>(image: &Tensor<T>) -> Tensor<T> {
    Tensor::zeros(image.shape())
}

/// Overlay blend factor.
pub const ALPHA: f64 = 0.5;
/// Overlay hue.
pub const OVERLAY: [u8; 3] = [255, 0, 0];

/// Scale for normalising `|values|`: the 99th percentile (nearest rank) of
/// the non-zero magnitudes, or `None` for an all-zero map.
pub fn normaliser(values: &[f64]) -> Option<f64> {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    if mags.is_empty() {
        return None;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((0.99 * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    Some(mags[rank - 1])
}

/// Blends `|map|` (clipped at the 99th percentile) as a red overlay at
/// alpha 0.5 over the grayscale underlay. An all-zero map returns the plain
/// underlay and a warning.
pub fn render_heatmap(map: &AttributionMap, underlay: &CleanImage) -> Result<(RgbImage, Option<String>)> {
    if (map.height, map.width) != (underlay.height, underlay.width) {
        return Err(Error::dim(
            "render_heatmap",
            format!(
                "map {}x{} vs underlay {}x{}",
                map.height, map.width, underlay.height, underlay.width
            ),
        ));
    }
    let scale = normaliser(&map.values);
    let warning = scale
        .is_none()
        .then(|| "attribution map is all zero; heatmap shows the underlay only".to_string());
    let gray = underlay.requantize().pixels;
    let mut out = RgbImage::new(map.width as u32, map.height as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        let g = gray[i] as f64;
        let a = scale.map_or(0.0, |s| (map.values[i].abs() / s).min(1.0)) * ALPHA;
        *px = Rgb(OVERLAY.map(|h| ((1.0 - a) * g + a * h as f64).round() as u8));
    }
    Ok((out, warning))
}

pub fn save_heatmap(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.into(),
            message: e.to_string(),
        })
}

pub const RAW_MAGIC: &[u8; 8] = b"CASSIG1\0";

/// 16-byte header (magic, H, W as little-endian u32) then f32 values.
pub fn encode_raw_map(map: &AttributionMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * map.values.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// `(H, W, values)` from a raw map.
pub fn decode_raw_map(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..8] != RAW_MAGIC {
        return Err(Error::Format("not a CASSIG1 attribution map".into()));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * h * w {
        return Err(Error::Format(format!(
            "attribution map {h}x{w} needs {} payload bytes, found {}",
            4 * h * w,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, w, values))
}

pub fn save_raw_map(map: &AttributionMap, path: &Path) -> Result<()> {
    fs::write(path, encode_raw_map(map)).map_err(|e| Error::io(path, e))
}
