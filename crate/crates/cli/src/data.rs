//! Loading dataset views into model-ready samples.

use std::path::Path;

use cass_core::labels::StenosisClass;
use cass_core::preprocess::{self, CleanImage, RawMprImage};
use cass_core::synthgen::{Manifest, ViewEntry};
use cass_core::trainer::Sample;
use cass_core::Result;
use rayon::prelude::*;

/// Every `stride`-th view of each branch, loaded and (optionally) cleaned,
/// in manifest order.
pub fn load_views(
    root: &Path,
    manifest: &Manifest,
    stride: usize,
    clean: bool,
) -> Result<Vec<(ViewEntry, CleanImage)>> {
    let views: Vec<ViewEntry> = manifest
        .views(root)
        .into_iter()
        .filter(|v| v.view % stride.max(1) == 0)
        .collect();
    views
        .into_par_iter()
        .map(|v| {
            let raw = RawMprImage::load_pgm(&v.path)?;
            let img = if clean {
                preprocess::preprocess(&raw)?
            } else {
                preprocess::normalize(&raw)
            };
            Ok((v, img))
        })
        .collect()
}

pub fn samples(views: &[(ViewEntry, CleanImage)]) -> Vec<Sample> {
    views
        .iter()
        .map(|(v, img)| Sample {
            image: img.to_tensor(),
            label: v.class.index(),
        })
        .collect()
}

pub fn class_counts(samples: &[Sample]) -> [usize; 3] {
    let mut c = [0; 3];
    for s in samples {
        c[s.label.min(StenosisClass::ALL.len() - 1)] += 1;
    }
    c
}
