use rayon::prelude::*;

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Stride, zero padding and channel groups of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvParams {
            stride,
            padding,
            groups,
        }
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams::new(1, 0, 1)
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn check<T: Real>(op: &'static str, input: &Tensor<T>, weight: &Tensor<T>, p: ConvParams) -> Result<Self> {
        let [n, cin, h, w] = input.shape().0;
        let [cout, cin_g, kh, kw] = weight.shape().0;
        if p.groups == 0 || p.stride == 0 {
            return Err(Error::dim(op, "stride and groups must be positive"));
        }
        if cin % p.groups != 0 {
            return Err(Error::dim(
                op,
                format!("input channels C={cin} not divisible by groups={}", p.groups),
            ));
        }
        if cout % p.groups != 0 {
            return Err(Error::dim(
                op,
                format!("output channels Cout={cout} not divisible by groups={}", p.groups),
            ));
        }
        if cin_g != cin / p.groups {
            return Err(Error::dim(
                op,
                format!(
                    "weight axis 1 is {cin_g} but C/groups = {}/{} = {}",
                    cin,
                    p.groups,
                    cin / p.groups
                ),
            ));
        }
        if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
            return Err(Error::dim(
                op,
                format!(
                    "kernel {kh}x{kw} larger than padded input H={} W={}",
                    h + 2 * p.padding,
                    w + 2 * p.padding
                ),
            ));
        }
        Ok(ConvGeom {
            n,
            h,
            w,
            cout,
            cin_g,
            cout_g: cout / p.groups,
            kh,
            kw,
            oh: (h + 2 * p.padding - kh) / p.stride + 1,
            ow: (w + 2 * p.padding - kw) / p.stride + 1,
            stride: p.stride,
            pad: p.padding,
        })
    }

    /// Range of output indices whose input coordinate `o*stride + k - pad`
    /// lands inside `[0, extent)`.
    #[inline]
    fn valid(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // o*s + off >= 0  and  o*s + off <= extent-1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_num = extent as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out as isize);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    #[inline]
    fn in_index(&self, o: usize, k: usize) -> usize {
        o * self.stride + k - self.pad
    }
}

/// Grouped 2-D convolution, weight layout `[Cout, Cin/groups, kh, kw]`.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, p: ConvParams) -> Result<Tensor<T>> {
    let g = ConvGeom::check("conv2d", input, weight, p)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::dim(
                "conv2d",
                format!("bias length {} != Cout {}", b.len(), g.cout),
            ));
        }
    }
    let out_shape = Shape::new(g.n, g.cout, g.oh, g.ow);
    let mut out = Tensor::zeros(out_shape);
    let in_len = input.shape().sample_len();
    let out_len = out_shape.sample_len();
    let wd = weight.data();
    out.data_mut()
        .par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each(|(o, x)| conv_sample_forward(&g, x, wd, bias, o));
    Ok(out)
}

fn conv_sample_forward<T: Real>(g: &ConvGeom, x: &[T], wd: &[T], bias: Option<&[T]>, o: &mut [T]) {
    let oplane = g.oh * g.ow;
    let iplane = g.h * g.w;
    for co in 0..g.cout {
        let grp = co / g.cout_g;
        let oc = &mut o[co * oplane..(co + 1) * oplane];
        if let Some(b) = bias {
            oc.iter_mut().for_each(|v| *v = b[co]);
        }
        for cl in 0..g.cin_g {
            let ci = grp * g.cin_g + cl;
            let xc = &x[ci * iplane..(ci + 1) * iplane];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid(ky, g.h, g.oh);
                for kx in 0..g.kw {
                    let wv = wd[((co * g.cin_g + cl) * g.kh + ky) * g.kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (ox0, ox1) = g.valid(kx, g.w, g.ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = g.in_index(oy, ky);
                        let orow = &mut oc[oy * g.ow..(oy + 1) * g.ow];
                        let irow = &xc[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            let n = ox1 - ox0;
                            for (ov, &iv) in orow[ox0..ox1].iter_mut().zip(&irow[ix0..ix0 + n]) {
                                *ov += wv * iv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] += wv * irow[g.in_index(ox, kx)];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d`] with respect to input, weight and (optionally) bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    with_bias: bool,
    p: ConvParams,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::check("conv2d_backward", input, weight, p)?;
    let expect = Shape::new(g.n, g.cout, g.oh, g.ow);
    if grad_out.shape() != expect {
        return Err(Error::dim(
            "conv2d_backward",
            format!("grad shape {} != output shape {expect}", grad_out.shape()),
        ));
    }
    let in_len = input.shape().sample_len();
    let out_len = expect.sample_len();
    let wd = weight.data();
    let mut gin = Tensor::zeros(input.shape());
    // Per-sample weight partials are reduced in sample order so the result
    // does not depend on the worker count.
    let partials: Vec<Vec<T>> = gin
        .data_mut()
        .par_chunks_mut(in_len)
        .zip(input.data().par_chunks(in_len))
        .zip(grad_out.data().par_chunks(out_len))
        .map(|((gi, x), go)| {
            let mut gw = vec![T::zero(); wd.len()];
            conv_sample_backward(&g, x, wd, go, gi, &mut gw);
            gw
        })
        .collect();
    let mut gw = vec![T::zero(); wd.len()];
    for part in &partials {
        for (a, &b) in gw.iter_mut().zip(part) {
            *a += b;
        }
    }
    let bias = with_bias.then(|| {
        let plane = g.oh * g.ow;
        let mut gb = vec![T::zero(); g.cout];
        for n in 0..g.n {
            let s = grad_out.sample(n);
            for (co, b) in gb.iter_mut().enumerate() {
                *b += s[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
            }
        }
        gb
    });
    Ok(ConvGrads {
        input: gin,
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias,
    })
}

fn conv_sample_backward<T: Real>(g: &ConvGeom, x: &[T], wd: &[T], go: &[T], gi: &mut [T], gw: &mut [T]) {
    let oplane = g.oh * g.ow;
    let iplane = g.h * g.w;
    for co in 0..g.cout {
        let grp = co / g.cout_g;
        let gc = &go[co * oplane..(co + 1) * oplane];
        for cl in 0..g.cin_g {
            let ci = grp * g.cin_g + cl;
            let xc = &x[ci * iplane..(ci + 1) * iplane];
            let gic = &mut gi[ci * iplane..(ci + 1) * iplane];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid(ky, g.h, g.oh);
                for kx in 0..g.kw {
                    let widx = ((co * g.cin_g + cl) * g.kh + ky) * g.kw + kx;
                    let wv = wd[widx];
                    let (ox0, ox1) = g.valid(kx, g.w, g.ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = g.in_index(oy, ky);
                        let grow = &gc[oy * g.ow..(oy + 1) * g.ow];
                        let irow = &xc[iy * g.w..(iy + 1) * g.w];
                        let girow = &mut gic[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            let n = ox1 - ox0;
                            for ((&gv, &iv), giv) in grow[ox0..ox1]
                                .iter()
                                .zip(&irow[ix0..ix0 + n])
                                .zip(girow[ix0..ix0 + n].iter_mut())
                            {
                                acc += gv * iv;
                                *giv += wv * gv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = g.in_index(ox, kx);
                                let gv = grow[ox];
                                acc += gv * irow[ix];
                                girow[ix] += wv * gv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

fn check_depthwise<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<()> {
    let c = input.shape().c();
    let [wc, one, _, _] = weight.shape().0;
    if wc != c || one != 1 {
        return Err(Error::dim(
            "depthwise_conv2d",
            format!(
                "weight {} must be [C={c},1,kh,kw] for input {}",
                weight.shape(),
                input.shape()
            ),
        ));
    }
    Ok(())
}

/// One kernel per channel; weight layout `[C, 1, kh, kw]`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_depthwise(input, weight)?;
    conv2d(input, weight, None, ConvParams::new(stride, padding, input.shape().c()))
}

pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    check_depthwise(input, weight)?;
    conv2d_backward(
        input,
        weight,
        grad_out,
        false,
        ConvParams::new(stride, padding, input.shape().c()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BnMode {
    Train,
    Eval,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running per-channel statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BnRunning<T> {
    pub fn new(channels: usize) -> Self {
        BnRunning {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Folds the batch statistics recorded in a Train-mode cache into the
    /// running estimates. Eval-mode caches are ignored.
    pub fn update(&mut self, cache: &BnCache<T>, momentum: T) {
        if let Some((bm, bv)) = cache.batch_stats() {
            self.update_with(bm, bv, momentum);
        }
    }

    pub fn update_with(&mut self, batch_mean: &[T], batch_var: &[T], momentum: T) {
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + momentum * batch_mean[c];
            self.var[c] = keep * self.var[c] + momentum * batch_var[c];
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Shape,
    mode: BnMode,
    /// Train mode only: batch mean and unbiased batch variance.
    batch_stats: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> BnCache<T> {
    /// Batch mean and unbiased batch variance (Train mode only).
    pub fn batch_stats(&self) -> Option<(&[T], &[T])> {
        self.batch_stats.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: &BnRunning<T>,
    mode: BnMode,
    eps: T,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let shape = input.shape();
    let [n, c, _, _] = shape.0;
    let plane = shape.plane();
    if gamma.len() != c || beta.len() != c || running.mean.len() != c || running.var.len() != c {
        return Err(Error::dim(
            "batch_norm",
            format!(
                "channel axis C={c} but gamma/beta/running have {}/{}/{}",
                gamma.len(),
                beta.len(),
                running.mean.len()
            ),
        ));
    }
    let m = n * plane;
    let x = input.data();
    let (mean, var, batch_stats) = match mode {
        BnMode::Eval => (running.mean.clone(), running.var.clone(), None),
        BnMode::Train => {
            if m < 2 {
                return Err(Error::DegenerateBatch {
                    op: "batch_norm",
                    count: m,
                });
            }
            let mf = T::of(m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    s += x[off..off + plane].iter().copied().sum::<T>();
                }
                let mu = s / mf;
                let mut q = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for &v in &x[off..off + plane] {
                        let d = v - mu;
                        q += d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = q / mf;
            }
            let unbiased = var.iter().map(|&v| v * mf / (mf - T::one())).collect::<Vec<_>>();
            (mean.clone(), var, Some((mean, unbiased)))
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (mu, is, gm, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in off..off + plane {
                let h = (x[i] - mu) * is;
                xhat[i] = h;
                od[i] = gm * h + bt;
            }
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            shape,
            mode,
            batch_stats,
        },
    ))
}

pub fn batch_norm_backward<T: Real>(cache: &BnCache<T>, gamma: &[T], grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
    let shape = cache.shape;
    if grad_out.shape() != shape {
        return Err(Error::dim(
            "batch_norm_backward",
            format!("grad shape {} != input shape {shape}", grad_out.shape()),
        ));
    }
    let [n, c, _, _] = shape.0;
    let plane = shape.plane();
    let g = grad_out.data();
    let xh = &cache.xhat;
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                ggamma[ch] += g[i] * xh[i];
                gbeta[ch] += g[i];
            }
        }
    }
    let mut gin = Tensor::zeros(shape);
    let gi = gin.data_mut();
    let mf = T::of((n * plane) as f64);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Eval => {
                    for i in off..off + plane {
                        gi[i] = g[i] * scale;
                    }
                }
                BnMode::Train => {
                    let mean_g = gbeta[ch] / mf;
                    let mean_gx = ggamma[ch] / mf;
                    for i in off..off + plane {
                        gi[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
                    }
                }
            }
        }
    }
    Ok(BnGrads {
        input: gin,
        gamma: ggamma,
        beta: gbeta,
    })
}

/// Output channel `j*groups + k` reads input channel `k*(C/groups) + j`.
pub fn channel_shuffle<T: Real>(input: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let c = input.shape().c();
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::dim(
            "channel_shuffle",
            format!("channels C={c} not divisible by groups={groups}"),
        ));
    }
    let per = c / groups;
    let src: Vec<usize> = (0..c).map(|o| (o % groups) * per + o / groups).collect();
    Ok(permute_channels(input, &src))
}

/// The inverse permutation of `channel_shuffle(_, groups)` is
/// `channel_shuffle(_, C/groups)`.
pub fn channel_shuffle_backward<T: Real>(grad_out: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let c = grad_out.shape().c();
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::dim(
            "channel_shuffle_backward",
            format!("channels C={c} not divisible by groups={groups}"),
        ));
    }
    channel_shuffle(grad_out, c / groups)
}

fn permute_channels<T: Real>(input: &Tensor<T>, src: &[usize]) -> Tensor<T> {
    let shape = input.shape();
    let [n, c, _, _] = shape.0;
    let plane = shape.plane();
    let x = input.data();
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for b in 0..n {
        for (o, &s) in src.iter().enumerate() {
            let dst = (b * c + o) * plane;
            let from = (b * c + s) * plane;
            od[dst..dst + plane].copy_from_slice(&x[from..from + plane]);
        }
    }
    out
}

/// Splits channels into two equal halves, preserving order.
pub fn channel_split<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = input.shape().0;
    if c % 2 != 0 {
        return Err(Error::dim("channel_split", format!("odd channel count C={c}")));
    }
    let half = c / 2;
    let plane = h * w;
    let x = input.data();
    let mut a = Vec::with_capacity(n * half * plane);
    let mut b = Vec::with_capacity(n * half * plane);
    for s in 0..n {
        let off = s * c * plane;
        a.extend_from_slice(&x[off..off + half * plane]);
        b.extend_from_slice(&x[off + half * plane..off + c * plane]);
    }
    let hs = Shape::new(n, half, h, w);
    Ok((Tensor::from_vec(hs, a)?, Tensor::from_vec(hs, b)?))
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.shape().0;
    let [nb, cb, hb, wb] = b.shape().0;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::dim(
            "concat_channels",
            format!("N/H/W differ: {} vs {}", a.shape(), b.shape()),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * plane);
    for s in 0..n {
        out.extend_from_slice(a.sample(s));
        out.extend_from_slice(b.sample(s));
    }
    Tensor::from_vec(Shape::new(n, ca + cb, h, w), out)
}

/// Routes the gradient of a concatenation back to its two inputs.
pub fn concat_channels_backward<T: Real>(grad_out: &Tensor<T>, channels_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = grad_out.shape().0;
    if channels_a == 0 || channels_a >= c {
        return Err(Error::dim(
            "concat_channels_backward",
            format!("split point {channels_a} outside (0,{c})"),
        ));
    }
    let plane = h * w;
    let g = grad_out.data();
    let mut a = Vec::with_capacity(n * channels_a * plane);
    let mut b = Vec::with_capacity(n * (c - channels_a) * plane);
    for s in 0..n {
        let off = s * c * plane;
        a.extend_from_slice(&g[off..off + channels_a * plane]);
        b.extend_from_slice(&g[off + channels_a * plane..off + c * plane]);
    }
    Ok((
        Tensor::from_vec(Shape::new(n, channels_a, h, w), a)?,
        Tensor::from_vec(Shape::new(n, c - channels_a, h, w), b)?,
    ))
}

pub fn channel_split_backward<T: Real>(ga: &Tensor<T>, gb: &Tensor<T>) -> Result<Tensor<T>> {
    concat_channels(ga, gb)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
    out
}

pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("{} vs {}", input.shape(), grad_out.shape()),
        ));
    }
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    in_shape: Shape,
    argmax: Vec<usize>,
}

/// Max pooling without padding; ties resolve to the first window element.
pub fn max_pool<T: Real>(input: &Tensor<T>, k: usize, stride: usize) -> Result<(Tensor<T>, PoolCache)> {
    let [n, c, h, w] = input.shape().0;
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(Error::dim(
            "max_pool",
            format!("window {k} stride {stride} does not fit H={h} W={w}"),
        ));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let x = input.data();
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    let mut argmax = vec![0usize; n * c * oh * ow];
    let od = out.data_mut();
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                let o = (nc * oh + oy) * ow + ox;
                od[o] = x[best];
                argmax[o] = best;
            }
        }
    }
    Ok((
        out,
        PoolCache {
            in_shape: input.shape(),
            argmax,
        },
    ))
}

pub fn max_pool_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::dim(
            "max_pool_backward",
            format!(
                "grad has {} values, pool output had {}",
                grad_out.len(),
                cache.argmax.len()
            ),
        ));
    }
    let mut gin = Tensor::zeros(cache.in_shape);
    let gi = gin.data_mut();
    for (&src, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[src] += g;
    }
    Ok(gin)
}

pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = input.shape().0;
    let plane = input.shape().plane();
    let inv = T::one() / T::of(plane as f64);
    let data = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(Shape::new(n, c, 1, 1), data).expect("pooled shape is consistent")
}

pub fn global_avg_pool_backward<T: Real>(in_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, _, _] = in_shape.0;
    if grad_out.shape() != Shape::new(n, c, 1, 1) {
        return Err(Error::dim(
            "global_avg_pool_backward",
            format!("grad {} does not match input {in_shape}", grad_out.shape()),
        ));
    }
    let plane = in_shape.plane();
    let inv = T::one() / T::of(plane as f64);
    let mut data = Vec::with_capacity(in_shape.numel());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_vec(in_shape, data)
}

/// Fully connected layer. The input is flattened per sample to F features;
/// weight is `[K, F, 1, 1]`; output `[N, K, 1, 1]`.
pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let n = input.shape().n();
    let f = input.shape().sample_len();
    let [k, wf, wh, ww] = weight.shape().0;
    if wf * wh * ww != f || bias.len() != k {
        return Err(Error::dim(
            "linear",
            format!(
                "input features F={f}, weight {}, bias length {}",
                weight.shape(),
                bias.len()
            ),
        ));
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(n * k);
    for s in 0..n {
        let x = input.sample(s);
        for j in 0..k {
            let row = &w[j * f..(j + 1) * f];
            let dot: T = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
            out.push(dot + bias[j]);
        }
    }
    Tensor::from_vec(Shape::new(n, k, 1, 1), out)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LinearGrads<T>> {
    let n = input.shape().n();
    let f = input.shape().sample_len();
    let k = weight.shape().n();
    if grad_out.shape() != Shape::new(n, k, 1, 1) || weight.shape().sample_len() != f {
        return Err(Error::dim(
            "linear_backward",
            format!(
                "input {}, weight {}, grad {}",
                input.shape(),
                weight.shape(),
                grad_out.shape()
            ),
        ));
    }
    let w = weight.data();
    let g = grad_out.data();
    let mut gin = Tensor::zeros(input.shape());
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); k];
    for s in 0..n {
        let x = input.sample(s);
        let gi = &mut gin.data_mut()[s * f..(s + 1) * f];
        for j in 0..k {
            let gv = g[s * k + j];
            gb[j] += gv;
            let row = &w[j * f..(j + 1) * f];
            let grow = &mut gw[j * f..(j + 1) * f];
            for i in 0..f {
                gi[i] += gv * row[i];
                grow[i] += gv * x[i];
            }
        }
    }
    Ok(LinearGrads {
        input: gin,
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias: gb,
    })
}

/// Row-wise softmax of `[N, K, 1, 1]` logits, max-subtracted.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape().c();
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    probs
}

/// Mean negative log-likelihood of the true classes and the softmax
/// probabilities.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k, h, w] = logits.shape().0;
    if h != 1 || w != 1 || labels.len() != n {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("logits {} with {} labels", logits.shape(), labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label: bad, classes: k });
    }
    let probs = softmax(logits);
    let mut loss = T::zero();
    for (s, &l) in labels.iter().enumerate() {
        let row = &logits.data()[s * k..(s + 1) * k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        loss += lse - row[l];
    }
    Ok((loss / T::of(n as f64), probs))
}

pub fn softmax_cross_entropy_backward<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let [n, k, _, _] = probs.shape().0;
    if labels.len() != n {
        return Err(Error::dim(
            "softmax_cross_entropy_backward",
            format!("{} labels for batch of {n}", labels.len()),
        ));
    }
    let inv = T::one() / T::of(n as f64);
    let mut g = probs.clone();
    for (s, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Label { label: l, classes: k });
        }
        let row = &mut g.data_mut()[s * k..(s + 1) * k];
        row[l] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(g)
}
