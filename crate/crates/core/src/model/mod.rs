//! ShuffleNet V2 style classifier assembled from the tensor operators.
//!
//! Parameters live in a flat, ordered [`ParamStore`]; layers hold indices
//! into it. Forward passes are pure (`&self`) and return caches that the
//! matching backward pass consumes, so an Eval-mode model can be shared
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    self, BnCache, BnMode, BnRunning, ConvParams, PoolCache, Real, Shape, Tensor, BN_EPSILON, BN_MOMENTUM,
};

mod block;
mod io;

pub use block::{Block, BlockCache, BlockSpec};
pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC};

/// A named trainable tensor. Its gradient accumulator is the tensor's grad
/// slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let mut value = value;
        value.grad_mut();
        Parameter {
            name: name.into(),
            value,
        }
    }

    pub fn grad(&self) -> &[T] {
        self.value.grad().expect("parameter grad slot is always allocated")
    }

    pub fn zero_grad(&mut self) {
        self.value.zero_grad();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedStats<T> {
    pub name: String,
    pub stats: BnRunning<T>,
}

/// Ordered parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub params: Vec<Parameter<T>>,
    pub stats: Vec<NamedStats<T>>,
}

/// Gradients aligned index-for-index with [`ParamStore::params`].
pub type Gradients<T> = Vec<Vec<T>>;

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            stats: Vec::new(),
        }
    }

    fn push(&mut self, name: String, value: Tensor<T>) -> Result<usize> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Argument(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Parameter::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect()
    }

    pub fn param(&self, idx: usize) -> &Tensor<T> {
        &self.params[idx].value
    }

    pub fn find(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Builds parameters with He-style random initialisation.
pub struct ParamBuilder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        ParamBuilder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self, name: String, shape: Shape, std: f64) -> Result<usize> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Argument(e.to_string()))?;
        let data = (0..shape.numel()).map(|_| T::of(dist.sample(&mut self.rng))).collect();
        self.store.push(name, Tensor::from_vec(shape, data)?)
    }

    fn constant(&mut self, name: String, shape: Shape, v: f64) -> Result<usize> {
        self.store.push(name, Tensor::full(shape, T::of(v)))
    }

    pub fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, p: ConvParams) -> Result<ConvRef> {
        let cin_g = cin / p.groups;
        let fan_in = (cin_g * k * k) as f64;
        let weight = self.normal(
            format!("{prefix}.weight"),
            Shape::new(cout, cin_g, k, k),
            (2.0 / fan_in).sqrt(),
        )?;
        Ok(ConvRef { weight, params: p })
    }

    pub fn bn(&mut self, prefix: &str, channels: usize) -> Result<BnRef> {
        let gamma = self.constant(format!("{prefix}.gamma"), Shape::new(channels, 1, 1, 1), 1.0)?;
        let beta = self.constant(format!("{prefix}.beta"), Shape::new(channels, 1, 1, 1), 0.0)?;
        self.store.stats.push(NamedStats {
            name: prefix.to_string(),
            stats: BnRunning::new(channels),
        });
        Ok(BnRef {
            gamma,
            beta,
            stats: self.store.stats.len() - 1,
        })
    }

    pub fn linear(&mut self, prefix: &str, features: usize, classes: usize) -> Result<LinearRef> {
        let weight = self.normal(
            format!("{prefix}.weight"),
            Shape::new(classes, features, 1, 1),
            (1.0 / features as f64).sqrt(),
        )?;
        let bias = self.constant(format!("{prefix}.bias"), Shape::new(classes, 1, 1, 1), 0.0)?;
        Ok(LinearRef { weight, bias })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvRef {
    pub weight: usize,
    pub params: ConvParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnRef {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearRef {
    pub weight: usize,
    pub bias: usize,
}

/// Forward-pass bookkeeping: BN mode and the batch statistics to fold into
/// running estimates afterwards.
pub struct FwdCtx<'a, T> {
    pub store: &'a ParamStore<T>,
    pub mode: BnMode,
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// Batch statistics of one BN layer, pending a running-stat update.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub stats: usize,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<'a, T: Real> FwdCtx<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: BnMode) -> Self {
        FwdCtx {
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }
}

/// conv → BN → optional ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub conv: ConvRef,
    pub bn: BnRef,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub struct UnitCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    pre_act: Option<Tensor<T>>,
}

impl Unit {
    pub fn forward<T: Real>(&self, ctx: &mut FwdCtx<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, UnitCache<T>)> {
        let s = ctx.store;
        let y = tensor::conv2d(x, s.param(self.conv.weight), None, self.conv.params)?;
        let (z, bc) = tensor::batch_norm(
            &y,
            s.param(self.bn.gamma).data(),
            s.param(self.bn.beta).data(),
            &s.stats[self.bn.stats].stats,
            ctx.mode,
            T::of(BN_EPSILON),
        )?;
        if let Some((mean, var)) = bc.batch_stats() {
            ctx.bn_updates.push(BnUpdate {
                stats: self.bn.stats,
                mean: mean.to_vec(),
                var: var.to_vec(),
            });
        }
        let (out, pre_act) = if self.relu {
            (tensor::relu(&z), Some(z))
        } else {
            (z, None)
        };
        Ok((
            out,
            UnitCache {
                input: x.clone(),
                bn: bc,
                pre_act,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &UnitCache<T>,
        grad: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let g = match &cache.pre_act {
            Some(z) => tensor::relu_backward(z, grad)?,
            None => grad.clone(),
        };
        let bg = tensor::batch_norm_backward(&cache.bn, store.param(self.bn.gamma).data(), &g)?;
        add_into(&mut grads[self.bn.gamma], &bg.gamma);
        add_into(&mut grads[self.bn.beta], &bg.beta);
        let cg = tensor::conv2d_backward(
            &cache.input,
            store.param(self.conv.weight),
            &bg.input,
            false,
            self.conv.params,
        )?;
        add_into(&mut grads[self.conv.weight], cg.weight.data());
        Ok(cg.input)
    }
}

pub(crate) fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 0 disables the max-pool.
    pub pool_kernel: usize,
    pub pool_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (C, H, W)
    pub input_shape: [usize; 3],
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    pub shuffle_groups: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Grayscale 64×64 input, 24-channel stem with max-pool, two stages.
    fn default() -> Self {
        ModelConfig {
            input_shape: [1, 64, 64],
            stem: StemSpec {
                out_channels: 24,
                kernel: 3,
                stride: 2,
                pool_kernel: 3,
                pool_stride: 2,
            },
            stages: vec![
                StageSpec {
                    blocks: 2,
                    out_channels: 48,
                },
                StageSpec {
                    blocks: 2,
                    out_channels: 96,
                },
            ],
            num_classes: 3,
            shuffle_groups: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// One stage with a single downsampling block on an 8×8 input.
    pub fn tiny() -> Self {
        ModelConfig {
            input_shape: [1, 8, 8],
            stem: StemSpec {
                out_channels: 4,
                kernel: 3,
                stride: 1,
                pool_kernel: 0,
                pool_stride: 1,
            },
            stages: vec![StageSpec {
                blocks: 1,
                out_channels: 8,
            }],
            num_classes: 3,
            shuffle_groups: 2,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input_shape[1] = h;
        self.input_shape[2] = w;
        self
    }

    pub fn block_specs(&self) -> Vec<Vec<BlockSpec>> {
        let mut cin = self.stem.out_channels;
        self.stages
            .iter()
            .map(|st| {
                (0..st.blocks)
                    .map(|b| {
                        let spec = BlockSpec {
                            in_channels: if b == 0 { cin } else { st.out_channels },
                            out_channels: st.out_channels,
                            downsample: b == 0,
                            shuffle_groups: self.shuffle_groups,
                        };
                        cin = st.out_channels;
                        spec
                    })
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(format!("model config: {m}")));
        if self.input_shape.contains(&0) {
            return bad("input shape has a zero axis".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes = {}", self.num_classes));
        }
        if self.stem.out_channels == 0 || self.stem.kernel == 0 || self.stem.stride == 0 {
            return bad("stem must have positive channels, kernel and stride".into());
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.blocks == 0 {
                return bad(format!("stage {i} has no blocks"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    stem: Unit,
    stages: Vec<Vec<Block>>,
    fc: LinearRef,
}

pub struct ModelCache<T> {
    input_shape: Shape,
    stem: UnitCache<T>,
    pool: Option<PoolCache>,
    blocks: Vec<BlockCache<T>>,
    pooled_in: Shape,
    features: Tensor<T>,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::new(&mut store, config.seed);
        let cin = config.input_shape[0];
        let stem = Unit {
            conv: b.conv(
                "stem.conv",
                cin,
                config.stem.out_channels,
                config.stem.kernel,
                ConvParams::new(config.stem.stride, config.stem.kernel / 2, 1),
            )?,
            bn: b.bn("stem.bn", config.stem.out_channels)?,
            relu: true,
        };
        let mut stages = Vec::new();
        let mut last = config.stem.out_channels;
        for (si, specs) in config.block_specs().into_iter().enumerate() {
            let mut blocks = Vec::new();
            for (bi, spec) in specs.into_iter().enumerate() {
                last = spec.out_channels;
                blocks.push(Block::build(spec, &format!("stage{}.block{bi}", si + 1), &mut b)?);
            }
            stages.push(blocks);
        }
        let fc = b.linear("fc", last, config.num_classes)?;
        let model = Model {
            config,
            store,
            stem,
            stages,
            fc,
        };
        // Run a shape probe so impossible configs fail at construction.
        let [c, h, w] = model.config.input_shape;
        model.forward(&Tensor::zeros(Shape::new(1, c, h, w)), BnMode::Eval)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.store.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.store.params
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Same weights and statistics in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: ParamStore {
                params: self
                    .store
                    .params
                    .iter()
                    .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                    .collect(),
                stats: self
                    .store
                    .stats
                    .iter()
                    .map(|s| NamedStats {
                        name: s.name.clone(),
                        stats: BnRunning {
                            mean: s.stats.mean.iter().map(|&v| U::of(v.f64())).collect(),
                            var: s.stats.var.iter().map(|&v| U::of(v.f64())).collect(),
                        },
                    })
                    .collect(),
            },
            stem: self.stem,
            stages: self.stages.clone(),
            fc: self.fc,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [c, h, w] = self.config.input_shape;
        let s = x.shape();
        if (s.c(), s.h(), s.w()) != (c, h, w) {
            return Err(Error::dim(
                "model_forward",
                format!("batch {s} does not match configured input ({c},{h},{w})"),
            ));
        }
        Ok(())
    }

    /// stem → stages → global average pool → linear. Returns `[N, K, 1, 1]`
    /// logits and the cache for [`Model::backward`].
    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<(Tensor<T>, ModelCache<T>)> {
        self.check_input(x)?;
        let mut ctx = FwdCtx::new(&self.store, mode);
        let (mut h, stem) = self.stem.forward(&mut ctx, x)?;
        let pool = if self.config.stem.pool_kernel > 0 {
            let (p, pc) = tensor::max_pool(&h, self.config.stem.pool_kernel, self.config.stem.pool_stride)?;
            h = p;
            Some(pc)
        } else {
            None
        };
        let mut blocks = Vec::new();
        for block in self.stages.iter().flatten() {
            let (y, bc) = block.forward(&mut ctx, &h)?;
            blocks.push(bc);
            h = y;
        }
        let pooled_in = h.shape();
        let features = tensor::global_avg_pool(&h);
        let logits = tensor::linear(
            &features,
            self.store.param(self.fc.weight),
            self.store.param(self.fc.bias).data(),
        )?;
        let bn_updates = ctx.bn_updates;
        Ok((
            logits,
            ModelCache {
                input_shape: x.shape(),
                stem,
                pool,
                blocks,
                pooled_in,
                features,
                bn_updates,
            },
        ))
    }

    /// Eval-mode logits.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, BnMode::Eval)?.0)
    }

    /// Eval-mode class probabilities.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tensor::softmax(&self.predict_logits(x)?))
    }

    /// Gradient of the logits w.r.t. the input and all parameters.
    pub fn backward(&self, cache: &ModelCache<T>, grad_logits: &Tensor<T>) -> Result<(Tensor<T>, Gradients<T>)> {
        let mut grads = self.store.zero_gradients();
        let lg = tensor::linear_backward(&cache.features, self.store.param(self.fc.weight), grad_logits)?;
        add_into(&mut grads[self.fc.weight], lg.weight.data());
        add_into(&mut grads[self.fc.bias], &lg.bias);
        let mut g = tensor::global_avg_pool_backward(cache.pooled_in, &lg.input)?;
        let blocks: Vec<&Block> = self.stages.iter().flatten().collect();
        for (block, bc) in blocks.into_iter().zip(&cache.blocks).rev() {
            g = block.backward(&self.store, bc, &g, &mut grads)?;
        }
        if let Some(pc) = &cache.pool {
            g = tensor::max_pool_backward(pc, &g)?;
        }
        let gin = self.stem.backward(&self.store, &cache.stem, &g, &mut grads)?;
        debug_assert_eq!(gin.shape(), cache.input_shape);
        Ok((gin, grads))
    }

    /// Folds Train-mode batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, cache: &ModelCache<T>) {
        let m = T::of(BN_MOMENTUM);
        for u in &cache.bn_updates {
            self.store.stats[u.stats].stats.update_with(&u.mean, &u.var, m);
        }
    }

    /// Adds `scale * grads` into the parameters' accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) {
        for (p, g) in self.store.params.iter_mut().zip(grads) {
            for (a, &b) in p.value.grad_mut().iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.store.params.iter_mut().for_each(Parameter::zero_grad);
    }
}
