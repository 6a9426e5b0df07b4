//! Gradient-accumulation equivalence: k copies of one micro-batch, each
//! scaled by 1/k, must give the same update as a single step on it.

#![allow(dead_code)]

use cass_core::model::{Model, ModelConfig, StageSpec, StemSpec};
use cass_core::tensor::{BnMode, Shape, Tensor};
use cass_core::trainer::{accumulate_and_step, Adam, AdamConfig, Batch, Classifier, Optimizer, Trainable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LR: f64 = 1e-3;

/// 16×16 input, 8-channel stem, one 16-channel stage.
pub fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        input_shape: [1, 16, 16],
        stem: StemSpec {
            out_channels: 8,
            kernel: 3,
            stride: 1,
            pool_kernel: 0,
            pool_stride: 1,
        },
        stages: vec![StageSpec {
            blocks: 2,
            out_channels: 16,
        }],
        num_classes: 3,
        shuffle_groups: 2,
        seed,
    }
}

pub fn random_batch(n: usize, seed: u64) -> Batch<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 256).map(|_| r.random_range(0.0f32..1.0)).collect();
    let labels = (0..n).map(|_| r.random_range(0..3)).collect();
    Batch::new(Tensor::from_vec(Shape::new(n, 1, 16, 16), data).unwrap(), labels).unwrap()
}

fn eval_classifier(seed: u64) -> Classifier<f32> {
    let mut c = Classifier::new(Model::new(small_config(seed)).unwrap());
    c.bn_mode = BnMode::Eval;
    c
}

fn flat(c: &Classifier<f32>) -> Vec<f32> {
    c.model
        .parameters()
        .iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect()
}

/// Largest absolute parameter difference between accumulating `k` copies
/// and one plain step, for each `k`.
pub fn max_update_differences(ks: &[usize], seed: u64) -> Vec<(usize, f64)> {
    let batch = random_batch(4, seed);

    // plain step: gradient at scale 1, then Adam
    let mut plain = eval_classifier(seed);
    let mut opt = Adam::new(AdamConfig::default());
    plain.loss_and_grad(&batch, 1.0).unwrap();
    opt.step(plain.parameters_mut(), LR).unwrap();
    let reference = flat(&plain);

    ks.iter()
        .map(|&k| {
            let mut acc = eval_classifier(seed);
            let mut opt = Adam::new(AdamConfig::default());
            let copies: Vec<&Batch<f32>> = vec![&batch; k];
            accumulate_and_step(&mut acc, &copies, &mut opt, LR).unwrap();
            let diff = flat(&acc)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs() as f64)
                .fold(0.0, f64::max);
            (k, diff)
        })
        .collect()
}

/// True when every accumulator is zero after the step and the k = 1 update
/// is bitwise identical to a plain step.
pub fn k1_bitwise_and_zeroed(seed: u64) -> bool {
    let batch = random_batch(4, seed);
    let mut plain = eval_classifier(seed);
    let mut opt = Adam::new(AdamConfig::default());
    plain.loss_and_grad(&batch, 1.0).unwrap();
    opt.step(plain.parameters_mut(), LR).unwrap();

    let mut acc = eval_classifier(seed);
    let mut opt = Adam::new(AdamConfig::default());
    accumulate_and_step(&mut acc, &[&batch], &mut opt, LR).unwrap();
    let zeroed = acc
        .model
        .parameters()
        .iter()
        .all(|p| p.grad().iter().all(|&g| g == 0.0));
    zeroed && flat(&acc) == flat(&plain)
}
