//! Training recipe: Adam, the LR range test, gradient accumulation,
//! augmentation and the epoch loop.

mod augment;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Parameter};
use crate::tensor::{self, BnMode, Real, Shape, Tensor};

pub use augment::{adjust_brightness, affine, augment, gaussian_blur, transpose, AugmentConfig};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Applies one update from the parameters' gradient accumulators and then
/// zeroes them.
pub trait Optimizer<T: Real> {
    fn step(&mut self, params: &mut [Parameter<T>], lr: f64) -> Result<()>;
}

fn check_finite<T: Real>(params: &[Parameter<T>]) -> Result<()> {
    match params.iter().find(|p| p.grad().iter().any(|g| !g.is_finite())) {
        Some(p) => Err(Error::NonFiniteGradient { param: p.name.clone() }),
        None => Ok(()),
    }
}

/// Plain gradient descent, `w ← w − lr·g`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sgd;

impl<T: Real> Optimizer<T> for Sgd {
    fn step(&mut self, params: &mut [Parameter<T>], lr: f64) -> Result<()> {
        check_finite(params)?;
        let lr = T::of(lr);
        for p in params {
            let grad = p.grad().to_vec();
            for (w, g) in p.value.data_mut().iter_mut().zip(grad) {
                *w -= lr * g;
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    /// A non-finite gradient aborts before any parameter moves.
    fn step(&mut self, params: &mut [Parameter<T>], lr: f64) -> Result<()> {
        check_finite(params)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
            return Err(Error::Argument(
                "optimizer state does not match the parameter list".into(),
            ));
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.steps as i32;
        let c1 = T::of(1.0 / (1.0 - beta1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - beta2.powi(t)));
        let (b1, b2, eps, lr) = (T::of(beta1), T::of(beta2), T::of(epsilon), T::of(lr));
        let one = T::one();
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad().to_vec();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Loss statistics of one forward/backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLoss {
    /// Mean loss over the batch.
    pub loss: f64,
    pub correct: usize,
    pub samples: usize,
}

/// Anything the optimizer loop can drive: a set of parameters and a way to
/// add `scale · ∇loss` for one batch into their accumulators.
pub trait Trainable: Clone {
    type Scalar: Real;
    type Batch;

    fn parameters_mut(&mut self) -> &mut [Parameter<Self::Scalar>];

    fn loss_and_grad(&mut self, batch: &Self::Batch, scale: f64) -> Result<BatchLoss>;
}

/// Labelled images, `[N, C, H, W]` with one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().n() != labels.len() {
            return Err(Error::dim(
                "batch",
                format!("{} images but {} labels", images.shape().n(), labels.len()),
            ));
        }
        Ok(Batch { images, labels })
    }
}

/// A model together with the BN mode used while training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub model: Model<T>,
    pub bn_mode: BnMode,
}

impl<T: Real> Classifier<T> {
    pub fn new(model: Model<T>) -> Self {
        Classifier {
            model,
            bn_mode: BnMode::Train,
        }
    }
}

impl<T: Real> Trainable for Classifier<T> {
    type Scalar = T;
    type Batch = Batch<T>;

    fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        self.model.parameters_mut()
    }

    fn loss_and_grad(&mut self, batch: &Batch<T>, scale: f64) -> Result<BatchLoss> {
        let (logits, cache) = self.model.forward(&batch.images, self.bn_mode)?;
        let (loss, probs) = tensor::softmax_cross_entropy(&logits, &batch.labels)?;
        let grad = tensor::softmax_cross_entropy_backward(&probs, &batch.labels)?;
        let (_, grads) = self.model.backward(&cache, &grad)?;
        self.model.accumulate(&grads, T::of(scale));
        self.model.apply_bn_updates(&cache);
        let k = logits.shape().c();
        let correct = batch
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(&probs.data()[i * k..(i + 1) * k]) == y)
            .count();
        Ok(BatchLoss {
            loss: loss.f64(),
            correct,
            samples: batch.labels.len(),
        })
    }
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sums `1/k`-scaled gradients over `k` micro-batches, then takes one
/// optimizer step. Returns the sample-weighted mean loss.
pub fn accumulate_and_step<M: Trainable, O: Optimizer<M::Scalar>>(
    model: &mut M,
    micro_batches: &[&M::Batch],
    optimizer: &mut O,
    lr: f64,
) -> Result<BatchLoss> {
    if micro_batches.is_empty() {
        return Err(Error::Argument(
            "accumulate_and_step needs at least one micro-batch".into(),
        ));
    }
    model.parameters_mut().iter_mut().for_each(Parameter::zero_grad);
    let scale = 1.0 / micro_batches.len() as f64;
    let mut total = BatchLoss::default();
    let mut weighted = 0.0;
    for mb in micro_batches {
        let l = model.loss_and_grad(mb, scale)?;
        weighted += l.loss * l.samples as f64;
        total.correct += l.correct;
        total.samples += l.samples;
    }
    total.loss = weighted / total.samples.max(1) as f64;
    optimizer.step(model.parameters_mut(), lr)?;
    Ok(total)
}

/// Output of [`lr_range_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRangeResult {
    pub lrs: Vec<f64>,
    /// Bias-corrected exponential moving average of the loss.
    pub losses: Vec<f64>,
    pub raw_losses: Vec<f64>,
    pub suggested_min: f64,
    pub suggested_max: f64,
    /// Iteration at which divergence stopped the sweep, if it did.
    pub diverged_at: Option<usize>,
}

impl LrRangeResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lr,smoothed_loss,raw_loss\n");
        for ((lr, l), r) in self.lrs.iter().zip(&self.losses).zip(&self.raw_losses) {
            s.push_str(&format!("{lr},{l},{r}\n"));
        }
        s
    }
}

pub const LR_SMOOTHING: f64 = 0.98;
pub const LR_DIVERGENCE_FACTOR: f64 = 4.0;

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Trains with a learning rate rising linearly from `lr_lo` to `lr_hi`,
/// one batch per iteration (cycling through `batches`), and records the
/// smoothed loss. The sweep stops once the smoothed loss exceeds four
/// times its best value. The model is restored to its original state.
/// `optimizer` should be freshly constructed.
pub fn lr_range_test<M: Trainable, O: Optimizer<M::Scalar>>(
    model: &mut M,
    batches: &[M::Batch],
    lr_lo: f64,
    lr_hi: f64,
    iterations: usize,
    optimizer: O,
) -> Result<LrRangeResult> {
    if !(lr_lo > 0.0 && lr_lo < lr_hi && lr_hi.is_finite()) {
        return Err(Error::Range(format!("need 0 < lr_lo < lr_hi, got {lr_lo} and {lr_hi}")));
    }
    if iterations < 2 {
        return Err(Error::Range(format!("need at least 2 iterations, got {iterations}")));
    }
    if batches.is_empty() {
        return Err(Error::Argument("lr range test needs at least one batch".into()));
    }
    let snapshot = model.clone();
    let result = sweep(model, batches, linspace(lr_lo, lr_hi, iterations), optimizer);
    *model = snapshot;
    result
}

fn sweep<M: Trainable, O: Optimizer<M::Scalar>>(
    model: &mut M,
    batches: &[M::Batch],
    lrs: Vec<f64>,
    mut opt: O,
) -> Result<LrRangeResult> {
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut best_i = 0;
    let mut losses = Vec::with_capacity(lrs.len());
    let mut raw_losses = Vec::with_capacity(lrs.len());
    let mut diverged_at = None;
    for (i, &lr) in lrs.iter().enumerate() {
        let step = accumulate_and_step(model, &[&batches[i % batches.len()]], &mut opt, lr);
        let raw = match step {
            Ok(l) if l.loss.is_finite() => l.loss,
            Ok(_) | Err(Error::NonFiniteGradient { .. }) if i > 0 => {
                diverged_at = Some(i);
                break;
            }
            Ok(_) => return Err(Error::Range("loss is not finite on the first iteration".into())),
            Err(Error::NonFiniteGradient { param }) => {
                return Err(Error::Range(format!(
                    "gradient of `{param}` not finite on the first iteration"
                )))
            }
            Err(e) => return Err(e),
        };
        avg = LR_SMOOTHING * avg + (1.0 - LR_SMOOTHING) * raw;
        let smoothed = avg / (1.0 - LR_SMOOTHING.powi(i as i32 + 1));
        if i > 0 && smoothed > LR_DIVERGENCE_FACTOR * best {
            diverged_at = Some(i);
            break;
        }
        if smoothed < best {
            best = smoothed;
            best_i = i;
        }
        losses.push(smoothed);
        raw_losses.push(raw);
    }
    let kept = losses.len();
    let suggested_max = lrs[best_i];
    Ok(LrRangeResult {
        lrs: lrs[..kept].to_vec(),
        losses,
        raw_losses,
        suggested_min: suggested_max / 10.0,
        suggested_max,
        diverged_at,
    })
}

/// One training image with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, C, H, W]`
    pub image: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub micro_batch: usize,
    pub accumulation_steps: usize,
    pub epochs: usize,
    pub augment: AugmentConfig,
    /// Duplicate minority-class samples up to the majority count.
    pub balance: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            micro_batch: 16,
            accumulation_steps: 1,
            epochs: 10,
            augment: AugmentConfig::default(),
            balance: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.micro_batch == 0 || self.accumulation_steps == 0 {
            return Err(Error::Argument(
                "micro_batch and accumulation_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch training summary, one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch log serialises") + "\n")
            .collect()
    }
}

/// Indices of the epoch's samples, with minority classes repeated
/// (cyclically) up to the majority count when balancing.
fn epoch_indices(samples: &[Sample], balance: bool) -> Vec<usize> {
    if !balance {
        return (0..samples.len()).collect();
    }
    let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    by_class
        .iter()
        .filter(|c| !c.is_empty())
        .flat_map(|c| c.iter().copied().cycle().take(target))
        .collect()
}

/// Runs `config.epochs` epochs of shuffled mini-batch training. `on_epoch`
/// sees each epoch's log as soon as it is complete.
pub fn train(
    model: &mut Model<f32>,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let classes = model.config().num_classes;
    if let Some(s) = samples.iter().find(|s| s.label >= classes) {
        return Err(Error::Label {
            label: s.label,
            classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut learner = Classifier::new(model.clone());
    let mut opt = Adam::new(config.adam);
    let mut log = TrainLog::default();
    let effective = config.micro_batch * config.accumulation_steps;

    for epoch in 1..=config.epochs {
        let wrap = |e: Error| Error::Epoch {
            epoch,
            source: Box::new(e),
        };
        let mut order = epoch_indices(samples, config.balance);
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        for step in order.chunks(effective) {
            let mut micro = Vec::new();
            for chunk in step.chunks(config.micro_batch) {
                micro.push(make_batch(samples, chunk, &config.augment, &mut rng).map_err(wrap)?);
            }
            let refs: Vec<&Batch<f32>> = micro.iter().collect();
            let l = accumulate_and_step(&mut learner, &refs, &mut opt, config.learning_rate).map_err(wrap)?;
            weighted += l.loss * l.samples as f64;
            correct += l.correct;
            seen += l.samples;
        }
        let entry = EpochLog {
            epoch,
            loss: weighted / seen as f64,
            acc: correct as f64 / seen as f64,
            lr: config.learning_rate,
        };
        log::info!("epoch {epoch}: loss {:.4} acc {:.3}", entry.loss, entry.acc);
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    *model = learner.model;
    Ok(log)
}

fn make_batch(samples: &[Sample], idx: &[usize], aug: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Batch<f32>> {
    let mut images = Vec::with_capacity(idx.len());
    for &i in idx {
        images.push(augment(&samples[i].image, aug, rng)?);
    }
    let images = Tensor::stack(&images)?;
    let labels = idx.iter().map(|&i| samples[i].label).collect();
    Batch::new(images, labels)
}

/// Stacks samples into one tensor without augmentation.
pub fn batch_of(samples: &[Sample]) -> Result<Batch<f32>> {
    let images: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
    Batch::new(Tensor::stack(&images)?, samples.iter().map(|s| s.label).collect())
}

/// Wraps a single-channel `H × W` image as a `[1, 1, H, W]` tensor.
pub fn image_tensor(pixels: Vec<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    Tensor::from_vec(Shape::new(1, 1, h, w), pixels)
}
