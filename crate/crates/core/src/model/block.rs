use serde::{Deserialize, Serialize};

use super::{FwdCtx, Gradients, ParamBuilder, ParamStore, Unit, UnitCache};
use crate::error::{Error, Result};
use crate::tensor::{self, ConvParams, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub downsample: bool,
    pub shuffle_groups: usize,
}

impl BlockSpec {
    pub fn basic(channels: usize) -> Self {
        BlockSpec {
            in_channels: channels,
            out_channels: channels,
            downsample: false,
            shuffle_groups: 2,
        }
    }

    pub fn down(in_channels: usize, out_channels: usize) -> Self {
        BlockSpec {
            in_channels,
            out_channels,
            downsample: true,
            shuffle_groups: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::dim("shufflenet_block", m));
        if !self.out_channels.is_multiple_of(2) || self.out_channels == 0 {
            return err(format!("out_channels={} must be even and positive", self.out_channels));
        }
        if self.shuffle_groups == 0 || !self.out_channels.is_multiple_of(self.shuffle_groups) {
            return err(format!(
                "out_channels={} not divisible by shuffle_groups={}",
                self.out_channels, self.shuffle_groups
            ));
        }
        if !self.downsample && self.in_channels != self.out_channels {
            return err(format!(
                "basic block needs in_channels == out_channels, got {} and {}",
                self.in_channels, self.out_channels
            ));
        }
        if self.in_channels == 0 {
            return err("in_channels must be positive".into());
        }
        Ok(())
    }
}

/// pointwise conv-BN-ReLU → 3×3 depthwise conv-BN → pointwise conv-BN-ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
struct MainBranch {
    pw1: Unit,
    dw: Unit,
    pw2: Unit,
}

impl MainBranch {
    fn build<T: Real>(prefix: &str, cin: usize, c: usize, stride: usize, b: &mut ParamBuilder<'_, T>) -> Result<Self> {
        Ok(MainBranch {
            pw1: Unit {
                conv: b.conv(&format!("{prefix}.pw1"), cin, c, 1, ConvParams::default())?,
                bn: b.bn(&format!("{prefix}.pw1.bn"), c)?,
                relu: true,
            },
            dw: Unit {
                conv: b.conv(&format!("{prefix}.dw"), c, c, 3, ConvParams::new(stride, 1, c))?,
                bn: b.bn(&format!("{prefix}.dw.bn"), c)?,
                relu: false,
            },
            pw2: Unit {
                conv: b.conv(&format!("{prefix}.pw2"), c, c, 1, ConvParams::default())?,
                bn: b.bn(&format!("{prefix}.pw2.bn"), c)?,
                relu: true,
            },
        })
    }

    fn forward<T: Real>(&self, ctx: &mut FwdCtx<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, [UnitCache<T>; 3])> {
        let (a, c1) = self.pw1.forward(ctx, x)?;
        let (b, c2) = self.dw.forward(ctx, &a)?;
        let (y, c3) = self.pw2.forward(ctx, &b)?;
        Ok((y, [c1, c2, c3]))
    }

    fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &[UnitCache<T>; 3],
        g: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let g = self.pw2.backward(store, &cache[2], g, grads)?;
        let g = self.dw.backward(store, &cache[1], &g, grads)?;
        self.pw1.backward(store, &cache[0], &g, grads)
    }
}

/// Stride-2 shortcut of the downsampling block: 3×3 depthwise-BN then
/// pointwise conv-BN-ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ShortcutBranch {
    dw: Unit,
    pw: Unit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Kind {
    Basic { main: MainBranch },
    Down { shortcut: ShortcutBranch, main: MainBranch },
}

/// One ShuffleNet V2 unit, either the channel-split residual block or the
/// spatial downsampling block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub spec: BlockSpec,
    kind: Kind,
}

#[derive(Debug, Clone)]
pub enum BlockCache<T> {
    Basic {
        main: [UnitCache<T>; 3],
    },
    Down {
        shortcut: [UnitCache<T>; 2],
        main: [UnitCache<T>; 3],
    },
}

impl Block {
    pub fn build<T: Real>(spec: BlockSpec, prefix: &str, b: &mut ParamBuilder<'_, T>) -> Result<Self> {
        spec.validate()?;
        let half = spec.out_channels / 2;
        let kind = if spec.downsample {
            let cin = spec.in_channels;
            Kind::Down {
                shortcut: ShortcutBranch {
                    dw: Unit {
                        conv: b.conv(&format!("{prefix}.branch1.dw"), cin, cin, 3, ConvParams::new(2, 1, cin))?,
                        bn: b.bn(&format!("{prefix}.branch1.dw.bn"), cin)?,
                        relu: false,
                    },
                    pw: Unit {
                        conv: b.conv(&format!("{prefix}.branch1.pw"), cin, half, 1, ConvParams::default())?,
                        bn: b.bn(&format!("{prefix}.branch1.pw.bn"), half)?,
                        relu: true,
                    },
                },
                main: MainBranch::build(&format!("{prefix}.branch2"), cin, half, 2, b)?,
            }
        } else {
            Kind::Basic {
                main: MainBranch::build(&format!("{prefix}.branch2"), half, half, 1, b)?,
            }
        };
        Ok(Block { spec, kind })
    }

    pub fn forward<T: Real>(&self, ctx: &mut FwdCtx<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let c = x.shape().c();
        if c != self.spec.in_channels {
            return Err(Error::dim(
                "shufflenet_block",
                format!("input has C={c}, block expects {}", self.spec.in_channels),
            ));
        }
        match &self.kind {
            Kind::Basic { main } => {
                let (left, right) = tensor::channel_split(x)?;
                let (y, mc) = main.forward(ctx, &right)?;
                let cat = tensor::concat_channels(&left, &y)?;
                let out = tensor::channel_shuffle(&cat, self.spec.shuffle_groups)?;
                Ok((out, BlockCache::Basic { main: mc }))
            }
            Kind::Down { shortcut, main } => {
                if x.shape().h() < 2 || x.shape().w() < 2 {
                    return Err(Error::dim(
                        "downsample_block",
                        format!("spatial dims {}x{} below 2", x.shape().h(), x.shape().w()),
                    ));
                }
                let (a, s1) = shortcut.dw.forward(ctx, x)?;
                let (left, s2) = shortcut.pw.forward(ctx, &a)?;
                let (right, mc) = main.forward(ctx, x)?;
                let cat = tensor::concat_channels(&left, &right)?;
                let out = tensor::channel_shuffle(&cat, self.spec.shuffle_groups)?;
                Ok((
                    out,
                    BlockCache::Down {
                        shortcut: [s1, s2],
                        main: mc,
                    },
                ))
            }
        }
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &BlockCache<T>,
        grad: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let g = tensor::channel_shuffle_backward(grad, self.spec.shuffle_groups)?;
        let (gl, gr) = tensor::concat_channels_backward(&g, self.spec.out_channels / 2)?;
        match (&self.kind, cache) {
            (Kind::Basic { main }, BlockCache::Basic { main: mc }) => {
                let gx2 = main.backward(store, mc, &gr, grads)?;
                tensor::channel_split_backward(&gl, &gx2)
            }
            (Kind::Down { shortcut, main }, BlockCache::Down { shortcut: sc, main: mc }) => {
                let ga = shortcut.pw.backward(store, &sc[1], &gl, grads)?;
                let mut gx = shortcut.dw.backward(store, &sc[0], &ga, grads)?;
                let gm = main.backward(store, mc, &gr, grads)?;
                super::add_into(gx.data_mut(), gm.data());
                Ok(gx)
            }
            _ => Err(Error::Argument("block cache does not match block kind".into())),
        }
    }
}
