//! Integrated Gradients checks, shared with the acceptance suite.

use cass_core::attribution::{self, Attributable, AttributionMap};
use cass_core::labels::StenosisClass;
use cass_core::model::{Model, ModelConfig};
use cass_core::preprocess::{self, Mask};
use cass_core::synthgen::{self, GenConfig};
use cass_core::tensor::{Shape, Tensor};
use cass_core::trainer::{self, AugmentConfig, Sample, TrainConfig};
use cass_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// F_k(x) = w_k · x.
pub struct LinearScorer {
    pub weights: Vec<Vec<f64>>,
}

impl Attributable<f64> for LinearScorer {
    fn target_logits_and_grad(&self, batch: &Tensor<f64>, target: usize) -> Result<(Vec<f64>, Tensor<f64>)> {
        let w = &self.weights[target];
        let n = batch.shape().n();
        let logits = (0..n)
            .map(|i| batch.sample(i).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect();
        let grad = Tensor::from_vec(batch.shape(), w.iter().copied().cycle().take(batch.len()).collect())?;
        Ok((logits, grad))
    }
}

/// F_k(x) = ½ Σ a_ki x_i² + b_k · x. Its path integrand is affine in α, so
/// the right-Riemann gap is exactly `c / m`.
pub struct QuadraticScorer {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Attributable<f64> for QuadraticScorer {
    fn target_logits_and_grad(&self, batch: &Tensor<f64>, target: usize) -> Result<(Vec<f64>, Tensor<f64>)> {
        let (a, b) = (&self.a[target], &self.b[target]);
        let n = batch.shape().n();
        let len = batch.shape().sample_len();
        let mut grad = Vec::with_capacity(n * len);
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let x = batch.sample(i);
            logits.push((0..len).map(|j| 0.5 * a[j] * x[j] * x[j] + b[j] * x[j]).sum());
            grad.extend((0..len).map(|j| a[j] * x[j] + b[j]));
        }
        Ok((logits, Tensor::from_vec(batch.shape(), grad)?))
    }
}

/// Largest |IG_i − w_i (x_i − x'_i)| over random linear scorers and step counts.
pub fn linear_exactness(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (c, h, w) = (rng.random_range(1..3), rng.random_range(1..6), rng.random_range(1..6));
        let len = c * h * w;
        let mut v = || (0..len).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let f = LinearScorer {
            weights: vec![v(), v(), v()],
        };
        let x = Tensor::from_vec(Shape::new(1, c, h, w), v()).unwrap();
        let x0 = Tensor::from_vec(Shape::new(1, c, h, w), v()).unwrap();
        for steps in [1, 2, 3, 7, 50] {
            let target = StenosisClass::from_index(steps % 3).unwrap();
            let map = attribution::integrated_gradients(&f, &x, target, &x0, "random", steps).unwrap();
            let wt = &f.weights[target.index()];
            for p in 0..h * w {
                let want: f64 = (0..c)
                    .map(|ch| wt[ch * h * w + p] * (x.data()[ch * h * w + p] - x0.data()[ch * h * w + p]))
                    .sum();
                worst = worst.max((map.values[p] - want).abs());
            }
            worst = worst.max(map.completeness_gap);
        }
    }
    worst
}

/// Random `[1, C, H, W]` image in `[0, 1]`.
pub fn random_image(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_vec(
        Shape::new(1, c, h, w),
        (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

/// Completeness gaps at `steps, 2·steps, …` for one model and image.
pub fn gap_sequence(model: &Model<f64>, image: &Tensor<f64>, target: StenosisClass, steps: &[usize]) -> Vec<f64> {
    let base = attribution::black_baseline(image);
    steps
        .iter()
        .map(|&m| {
            attribution::integrated_gradients(model, image, target, &base, "zeros", m)
                .unwrap()
                .completeness_gap
        })
        .collect()
}

/// Gaps below this are round-off and exempt from the doubling check.
pub const GAP_FLOOR: f64 = 1e-10;

/// Tiny f64 model with BN shifted off zero, so the logit is not positively
/// homogeneous along rays from the black baseline.
pub fn random_tiny_model(seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::new(ModelConfig::tiny().with_seed(seed)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in &mut m.store.params {
        if p.name.ends_with(".gamma") || p.name.ends_with(".beta") {
            for v in p.value.data_mut() {
                *v += r.random_range(-0.5..0.5);
            }
        }
    }
    for s in &mut m.store.stats {
        for v in &mut s.stats.mean {
            *v = r.random_range(-0.3..0.3);
        }
        for v in &mut s.stats.var {
            *v = r.random_range(0.5..1.5);
        }
    }
    m
}

/// Step doublings 8 → 256 on one model; returns each violation of
/// `gap(2m) ≤ 1.5 · gap(m)` above the round-off floor.
pub fn doubling_violations(model: &Model<f64>, images: &[Tensor<f64>]) -> Vec<String> {
    let steps = [8, 16, 32, 64, 128, 256];
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for target in StenosisClass::ALL {
            let gaps = gap_sequence(model, img, target, &steps);
            for k in 1..gaps.len() {
                if gaps[k] > GAP_FLOOR && gaps[k] > 1.5 * gaps[k - 1] {
                    out.push(format!(
                        "image {i} class {target}: gap {} at {} steps vs {} at {}",
                        gaps[k],
                        steps[k],
                        gaps[k - 1],
                        steps[k - 1]
                    ));
                }
            }
        }
    }
    out
}

/// Cleaned synthetic views as training samples, every `stride`-th view.
pub fn synthetic_samples(cfg: &GenConfig, branches: usize, stride: usize, seed: u64) -> Vec<(Sample, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for b in 0..branches {
        let sev = [0.0, 35.0, 80.0][b % 3];
        for (img, gt) in synthgen::generate_branch_views(sev, cfg.views_per_branch, cfg, &mut rng)
            .unwrap()
            .into_iter()
            .step_by(stride)
        {
            let clean = preprocess::preprocess(&img).unwrap();
            out.push((
                Sample {
                    image: clean.to_tensor(),
                    label: gt.class.index(),
                },
                gt.vessel_mask,
            ));
        }
    }
    out
}

/// Desk-config model trained briefly on synthetic views.
pub fn train_small_desk_model(seed: u64) -> (Model<f32>, Vec<(Sample, Mask)>) {
    let cfg = GenConfig::default();
    let data = synthetic_samples(&cfg, 12, 5, seed);
    let mut model = Model::new(ModelConfig::default().with_seed(seed)).unwrap();
    let samples: Vec<Sample> = data.iter().map(|(s, _)| s.clone()).collect();
    let tc = TrainConfig {
        learning_rate: 1e-3,
        micro_batch: 16,
        epochs: 4,
        augment: AugmentConfig::none(),
        seed,
        ..TrainConfig::default()
    };
    trainer::train(&mut model, &samples, &tc, |_| {}).unwrap();
    (model, data)
}

/// IG maps at `steps` for the true class of each sample, computed in f64.
pub fn maps(model: &Model<f32>, samples: &[(Sample, Mask)], steps: usize) -> Vec<AttributionMap> {
    let m64 = model.cast::<f64>();
    samples
        .iter()
        .map(|(s, _)| {
            let x = s.image.cast::<f64>();
            let target = StenosisClass::from_index(s.label).unwrap();
            attribution::integrated_gradients(&m64, &x, target, &attribution::black_baseline(&x), "zeros", steps)
                .unwrap()
        })
        .collect()
}

/// Mean |attribution| inside and outside the vessel mask.
pub fn vessel_focus(maps: &[AttributionMap], samples: &[(Sample, Mask)]) -> (f64, f64) {
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (m, (_, mask)) in maps.iter().zip(samples) {
        for (v, &b) in m.values.iter().zip(&mask.bits) {
            if b {
                inside += v.abs();
                n_in += 1;
            } else {
                outside += v.abs();
                n_out += 1;
            }
        }
    }
    (inside / n_in.max(1) as f64, outside / n_out.max(1) as f64)
}
