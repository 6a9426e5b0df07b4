//! Preprocessing checks against generator ground truth, shared with the
//! acceptance suite.

use cass_core::preprocess::{self, Mask, RawMprImage};
use cass_core::synthgen::{self, GenConfig, GroundTruth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Views of `branches` random branches rendered with `cfg`.
pub fn views(cfg: &GenConfig, branches: usize, views: usize, seed: u64) -> Vec<(RawMprImage, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..branches)
        .flat_map(|_| {
            let sev = cfg.severity.sample(&mut rng);
            synthgen::generate_branch_views(sev, views, cfg, &mut rng).unwrap()
        })
        .collect()
}

/// Smallest text-mask IoU against the generator's glyph mask.
pub fn min_text_iou(branches: usize, seed: u64) -> f64 {
    let cfg = GenConfig {
        calcified_distractor: true,
        distractor_branch_prob: 0.5,
        ..GenConfig::default()
    };
    views(&cfg, branches, 10, seed)
        .iter()
        .map(|(img, gt)| preprocess::detect_text_mask(img).iou(&gt.text_mask))
        .fold(f64::INFINITY, f64::min)
}

/// Brightest cleaned value inside the former text region.
pub fn max_in_text_region(branches: usize, seed: u64) -> f32 {
    views(&GenConfig::default(), branches, 10, seed)
        .iter()
        .map(|(img, gt)| {
            let clean = preprocess::preprocess(img).unwrap();
            clean
                .pixels
                .iter()
                .zip(&gt.text_mask.bits)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(0.0f32, f32::max)
        })
        .fold(0.0, f32::max)
}

/// Random image and random non-total mask; `Ok` when every unmasked pixel
/// passes through inpainting bit for bit.
pub fn unmasked_identical(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (h, w) = (rng.random_range(1..20), rng.random_range(2..20));
        let pixels: Vec<u8> = (0..h * w).map(|_| rng.random()).collect();
        let img = RawMprImage::new(h, w, pixels).unwrap();
        let p = rng.random_range(0.0..0.9);
        let mut mask = Mask::empty(h, w);
        mask.bits.iter_mut().for_each(|b| *b = rng.random_bool(p));
        mask.bits[rng.random_range(0..h * w)] = false;
        let filled = preprocess::fill_masked(&img, &mask).map_err(|e| e.to_string())?;
        for i in 0..h * w {
            if !mask.bits[i] && filled[i] != img.pixels[i] as f64 {
                return Err(format!("case {case}: pixel {i} changed"));
            }
            if !(0.0..=255.0).contains(&filled[i]) {
                return Err(format!("case {case}: pixel {i} out of range"));
            }
        }
    }
    Ok(())
}

/// Largest deviation of `preprocess(requantize(preprocess(x)))` from
/// `preprocess(x)`, and whether text-free images come out as a pure rescale.
pub fn idempotence(branches: usize, seed: u64) -> (f32, bool) {
    let with_text = views(&GenConfig::default(), branches, 10, seed);
    let worst = with_text
        .iter()
        .map(|(img, _)| {
            let once = preprocess::preprocess(img).unwrap();
            let twice = preprocess::preprocess(&once.requantize()).unwrap();
            once.pixels
                .iter()
                .zip(&twice.pixels)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max)
        })
        .fold(0.0, f32::max);
    let clean_cfg = GenConfig {
        text_overlay: false,
        calcified_distractor: true,
        ..GenConfig::default()
    };
    let rescale = views(&clean_cfg, branches, 10, seed + 1)
        .iter()
        .all(|(img, _)| preprocess::preprocess(img).unwrap() == preprocess::normalize(img));
    (worst, rescale)
}
