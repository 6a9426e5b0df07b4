//! Burned-in text removal: find the brightest connected blobs, fill them from
//! their neighbours, and rescale to `[0, 1]`.

use std::collections::VecDeque;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Number of views rendered per branch.
pub const VIEWS_PER_BRANCH: usize = 50;

/// Where an image came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub patient_id: String,
    pub branch_id: String,
    pub view_index: usize,
}

/// 8-bit MPR view, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMprImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub provenance: Provenance,
}

impl RawMprImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(RawMprImage {
            height,
            width,
            pixels,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Result<Self> {
        if provenance.view_index >= VIEWS_PER_BRANCH {
            return Err(Error::Argument(format!(
                "view index {} outside [0, {VIEWS_PER_BRANCH})",
                provenance.view_index
            )));
        }
        self.provenance = provenance;
        Ok(self)
    }

    /// Reads a binary PGM (or any grayscale-convertible image).
    pub fn load_pgm(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.into(),
                message: e.to_string(),
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        RawMprImage::new(h as usize, w as usize, img.into_raw())
    }

    /// Writes a binary (P5) PGM.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.height, self.width, &self.pixels)
    }
}

pub(crate) fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Image {
            path: path.into(),
            message: e.to_string(),
        })
}

/// Cleaned image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub provenance: Provenance,
}

impl CleanImage {
    /// Rounds back to 8 bits.
    pub fn requantize(&self) -> RawMprImage {
        RawMprImage {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// `[1, 1, H, W]` tensor for the model.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.pixels.clone()).expect("consistent dims")
    }
}

/// Boolean pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count();
        let union = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

fn neighbours8(idx: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = ((idx / w) as isize, (idx % w) as isize);
    (-1..=1isize)
        .flat_map(move |dy| (-1..=1isize).map(move |dx| (dy, dx)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dy, dx)| {
            let (ny, nx) = (y + dy, x + dx);
            (ny >= 0 && nx >= 0 && ny < h as isize && nx < w as isize).then(|| ny as usize * w + nx as usize)
        })
}

/// Text detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextDetector {
    /// Pixels at or above this intensity quantile are candidates.
    pub quantile: f64,
    /// The threshold never drops below this level, so images without
    /// saturated text yield an empty mask.
    pub min_level: u8,
    /// Smaller 8-connected components are discarded as noise.
    pub min_component: usize,
}

impl Default for TextDetector {
    fn default() -> Self {
        TextDetector {
            quantile: 0.999,
            min_level: 250,
            min_component: 2,
        }
    }
}

impl TextDetector {
    pub fn threshold(&self, img: &RawMprImage) -> u8 {
        let mut sorted = img.pixels.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let rank = ((self.quantile * n as f64).ceil() as usize).clamp(1, n);
        sorted[rank - 1].max(self.min_level)
    }

    pub fn detect(&self, img: &RawMprImage) -> Mask {
        let (h, w) = (img.height, img.width);
        let mut mask = Mask::empty(h, w);
        let (lo, hi) = img
            .pixels
            .iter()
            .fold((u8::MAX, u8::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        if lo == hi {
            return mask;
        }
        let t = self.threshold(img);
        let hot: Vec<bool> = img.pixels.iter().map(|&p| p >= t).collect();
        let mut seen = vec![false; h * w];
        let mut queue = VecDeque::new();
        for start in 0..h * w {
            if !hot[start] || seen[start] {
                continue;
            }
            let mut component = vec![start];
            seen[start] = true;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                for j in neighbours8(i, h, w) {
                    if hot[j] && !seen[j] {
                        seen[j] = true;
                        component.push(j);
                        queue.push_back(j);
                    }
                }
            }
            if component.len() >= self.min_component {
                for i in component {
                    mask.bits[i] = true;
                }
            }
        }
        mask
    }
}

/// Default text mask.
pub fn detect_text_mask(img: &RawMprImage) -> Mask {
    TextDetector::default().detect(img)
}

/// Fills masked pixels ring by ring from the mask boundary inward. Every
/// pixel of a ring takes the mean of its already-known 8-neighbours (unmasked
/// pixels or earlier rings), so the result does not depend on scan order.
/// Unmasked pixels are copied through unchanged. Values stay on the 8-bit
/// scale.
pub fn fill_masked(img: &RawMprImage, mask: &Mask) -> Result<Vec<f64>> {
    let (h, w) = (img.height, img.width);
    if mask.height != h || mask.width != w {
        return Err(Error::Shape(format!(
            "mask {}x{} for image {h}x{w}",
            mask.height, mask.width
        )));
    }
    let total = mask.count();
    if total == h * w {
        return Err(Error::Inpaint("every pixel is masked, nothing to fill from".into()));
    }
    let mut values: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();
    let mut known: Vec<bool> = mask.bits.iter().map(|&m| !m).collect();
    let mut queued = vec![false; h * w];
    let mut ring: Vec<usize> = (0..h * w)
        .filter(|&i| mask.bits[i] && neighbours8(i, h, w).any(|j| known[j]))
        .collect();
    ring.iter().for_each(|&i| queued[i] = true);
    let mut filled = 0;
    while !ring.is_empty() {
        let fills: Vec<f64> = ring
            .iter()
            .map(|&i| {
                let (sum, n) = neighbours8(i, h, w)
                    .filter(|&j| known[j])
                    .fold((0.0, 0usize), |(s, n), j| (s + values[j], n + 1));
                sum / n as f64
            })
            .collect();
        for (&i, v) in ring.iter().zip(fills) {
            values[i] = v;
            known[i] = true;
        }
        filled += ring.len();
        let mut next = Vec::new();
        for &i in &ring {
            for j in neighbours8(i, h, w) {
                if !known[j] && !queued[j] {
                    queued[j] = true;
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        ring = next;
    }
    debug_assert_eq!(filled, total);
    Ok(values)
}

/// [`fill_masked`], then division by 255.
pub fn inpaint_neighbors(img: &RawMprImage, mask: &Mask) -> Result<CleanImage> {
    let values = fill_masked(img, mask)?;
    Ok(CleanImage {
        height: img.height,
        width: img.width,
        pixels: values.iter().map(|&v| (v / 255.0) as f32).collect(),
        provenance: img.provenance.clone(),
    })
}

/// Text detection, inpainting and rescaling.
pub fn preprocess(img: &RawMprImage) -> Result<CleanImage> {
    inpaint_neighbors(img, &detect_text_mask(img))
}

/// Pure rescale to `[0, 1]`, for callers that skip cleaning.
pub fn normalize(img: &RawMprImage) -> CleanImage {
    CleanImage {
        height: img.height,
        width: img.width,
        pixels: img.pixels.iter().map(|&p| (p as f64 / 255.0) as f32).collect(),
        provenance: img.provenance.clone(),
    }
}
