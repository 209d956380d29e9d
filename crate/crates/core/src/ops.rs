//! The network's operator vocabulary: grouped 2-D convolution (subsuming
//! point-wise, depth-wise, and group variants), channel shuffle/split/concat,
//! batch-norm folding, activations, pooling, the space-to-depth stem slice,
//! the chained spatial-pyramid block, and nearest 2x upsampling.
//!
//! Convolution accumulates per output element in a fixed order — kernel row
//! ascending, then kernel column, then input channel — with the bias added
//! after the accumulation. Parallelism only splits work across independent
//! output planes, so results are bit-identical at any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of one convolution: channel counts, kernel, stride, zero
/// padding, and group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        }
    }

    /// 1x1 channel-mixing convolution, stride 1, no padding.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvParams::new(in_channels, out_channels, (1, 1), (1, 1), (0, 0), 1)
    }

    /// Per-channel spatial convolution: groups = in = out.
    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvParams::new(
            channels,
            channels,
            (kernel, kernel),
            (stride, stride),
            (padding, padding),
            channels,
        )
    }

    /// Validates the parameter set against concrete input/weight shapes.
    pub fn validate(&self, input: Shape, weight: Shape, bias: Option<&[f32]>) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::Param("groups must be positive".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Param("channel counts must be positive".into()));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::Param(format!(
                "groups {} must divide in {} and out {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Param(format!(
                "kernel {:?} and stride {:?} must be positive",
                self.kernel, self.stride
            )));
        }
        if input.c != self.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, convolution expects {}",
                input.c, self.in_channels
            )));
        }
        let expect = Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        );
        if weight != expect {
            return Err(Error::Shape(format!(
                "weight shape {weight} does not match expected {expect}"
            )));
        }
        if let Some(b) = bias {
            if b.len() != self.out_channels {
                return Err(Error::Shape(format!(
                    "bias length {} != out channels {}",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        self.output_hw(input.h, input.w)?;
        Ok(())
    }

    /// Output spatial extents: floor((x + 2p - k)/s) + 1, each at least 1.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::Param(format!(
                "kernel {:?} exceeds padded input {h}x{w} (padding {:?}): empty output",
                self.kernel, self.padding
            )));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }
}

/// Grouped cross-correlation. Output channel `o` in group `q` reads input
/// channels `[q*Cin/g, (q+1)*Cin/g)`; zero padding contributes nothing.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    p: &ConvParams,
) -> Result<Tensor> {
    p.validate(input.shape(), weight.shape(), bias)?;
    let s = input.shape();
    let (oh, ow) = p.output_hw(s.h, s.w)?;
    let cin_g = p.in_channels / p.groups;
    let cout_g = p.out_channels / p.groups;
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;

    // One task per (batch item, output channel) plane; collection preserves
    // plane order, so the assembled tensor is identical at any thread count.
    let planes: Vec<Vec<f32>> = (0..s.n * p.out_channels)
        .into_par_iter()
        .map(|idx| {
            let n = idx / p.out_channels;
            let oc = idx % p.out_channels;
            let group = oc / cout_g;
            let mut plane = vec![0.0f32; oh * ow];
            for oy in 0..oh {
                let row = &mut plane[oy * ow..(oy + 1) * ow];
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for kx in 0..kw {
                        // Output columns whose tap (kx) lands inside the row.
                        let lo = if kx >= pw { 0 } else { (pw - kx).div_ceil(sw) };
                        if s.w + pw < kx + 1 {
                            continue;
                        }
                        let hi = ((s.w - 1 + pw - kx) / sw).min(ow - 1);
                        if lo > hi {
                            continue;
                        }
                        for cg in 0..cin_g {
                            let ic = group * cin_g + cg;
                            let wv = weight.plane(oc, cg)[ky * kw + kx];
                            let irow = &input.plane(n, ic)[iy * s.w..(iy + 1) * s.w];
                            let base = lo * sw + kx - pw;
                            if sw == 1 {
                                let src = &irow[base..base + (hi - lo) + 1];
                                for (d, v) in row[lo..=hi].iter_mut().zip(src) {
                                    *d += wv * v;
                                }
                            } else {
                                let mut ix = base;
                                for d in row[lo..=hi].iter_mut() {
                                    *d += wv * irow[ix];
                                    ix += sw;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let bv = b[oc];
                for v in plane.iter_mut() {
                    *v += bv;
                }
            }
            plane
        })
        .collect();

    let mut data = Vec::with_capacity(s.n * p.out_channels * oh * ow);
    for plane in planes {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec((s.n, p.out_channels, oh, ow), data)
}

/// Interleaves channels across groups: with n = c/g, input channel
/// `q*n + r` moves to output channel `r*g + q` (reshape, transpose,
/// flatten). Values are untouched.
pub fn channel_shuffle(input: &Tensor, groups: usize) -> Result<Tensor> {
    let s = input.shape();
    if groups == 0 || s.c % groups != 0 {
        return Err(Error::Param(format!(
            "groups {groups} must divide channel count {}",
            s.c
        )));
    }
    let per = s.c / groups;
    let hw = s.h * s.w;
    let mut out = Tensor::zeros(s)?;
    for n in 0..s.n {
        for q in 0..groups {
            for r in 0..per {
                let dst = (n * s.c + r * groups + q) * hw;
                let src = input.plane(n, q * per + r);
                out.data_mut()[dst..dst + hw].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Halves channels: first c/2 and the rest. Requires an even channel count.
pub fn channel_split(input: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = input.shape();
    if s.c % 2 != 0 {
        return Err(Error::Param(format!(
            "channel split needs an even channel count, got {}",
            s.c
        )));
    }
    let half = s.c / 2;
    let hw = s.h * s.w;
    let mut a = Tensor::zeros((s.n, half, s.h, s.w))?;
    let mut b = Tensor::zeros((s.n, half, s.h, s.w))?;
    for n in 0..s.n {
        for c in 0..half {
            let dst = (n * half + c) * hw;
            a.data_mut()[dst..dst + hw].copy_from_slice(input.plane(n, c));
            b.data_mut()[dst..dst + hw].copy_from_slice(input.plane(n, half + c));
        }
    }
    Ok((a, b))
}

/// Stacks feature maps along the channel axis, source order preserved.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Param("concat of zero tensors".into()))?
        .shape();
    let mut total_c = first.c;
    for t in &parts[1..] {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::Shape(format!(
                "concat operands disagree outside channels: {s} vs {first}"
            )));
        }
        total_c += s.c;
    }
    let hw = first.h * first.w;
    let mut out = Tensor::zeros((first.n, total_c, first.h, first.w))?;
    for n in 0..first.n {
        let mut base = 0;
        for t in parts {
            for c in 0..t.shape().c {
                let dst = (n * total_c + base + c) * hw;
                out.data_mut()[dst..dst + hw].copy_from_slice(t.plane(n, c));
            }
            base += t.shape().c;
        }
    }
    Ok(out)
}

/// Per-channel batch-norm statistics for inference-time folding.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
}

impl BnParams {
    /// Neutral statistics: scale 1, shift 0.
    pub fn identity(channels: usize, epsilon: f32) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if v.len() != channels {
                return Err(Error::Shape(format!(
                    "batch-norm {name} has {} entries, expected {channels}",
                    v.len()
                )));
            }
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Param("negative running variance".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Param(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Folds batch norm into the preceding convolution:
/// `w' = w * gamma/sqrt(var+eps)`, `b' = (b - mean) * gamma/sqrt(var+eps) + beta`.
pub fn batchnorm_fold(
    conv_weight: &Tensor,
    conv_bias: Option<&[f32]>,
    bn: &BnParams,
) -> Result<(Tensor, Vec<f32>)> {
    let channels = conv_weight.shape().n;
    bn.validate(channels)?;
    if let Some(b) = conv_bias {
        if b.len() != channels {
            return Err(Error::Shape(format!(
                "conv bias length {} != out channels {channels}",
                b.len()
            )));
        }
    }
    let per = conv_weight.shape().c * conv_weight.shape().h * conv_weight.shape().w;
    let mut weight = conv_weight.clone();
    let mut bias = vec![0.0f32; channels];
    for o in 0..channels {
        let scale = (bn.gamma[o] as f64 / (bn.running_var[o] as f64 + bn.epsilon as f64).sqrt()) as f32;
        for v in &mut weight.data_mut()[o * per..(o + 1) * per] {
            *v *= scale;
        }
        let b0 = conv_bias.map_or(0.0, |b| b[o]);
        bias[o] = (b0 - bn.running_mean[o]) * scale + bn.beta[o];
    }
    Ok((weight, bias))
}

/// Elementwise nonlinearity selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    Silu,
    Sigmoid,
    Identity,
}

#[inline(always)]
pub fn sigmoid_scalar(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Applies the chosen nonlinearity to every element.
pub fn activation(kind: Act, input: &Tensor) -> Result<Tensor> {
    let mut out = input.clone();
    match kind {
        Act::Identity => {}
        Act::Relu => {
            for v in out.data_mut() {
                *v = v.max(0.0);
            }
        }
        Act::Sigmoid => {
            for v in out.data_mut() {
                *v = sigmoid_scalar(*v);
            }
        }
        Act::Silu => {
            for v in out.data_mut() {
                *v *= sigmoid_scalar(*v);
            }
        }
    }
    Ok(out)
}

/// Pool output extents; padding must stay below the kernel so no window is
/// entirely synthetic.
pub fn pool_output_hw(
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(usize, usize)> {
    if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Param(format!(
            "pool kernel {kernel:?} / stride {stride:?} must be positive"
        )));
    }
    if padding.0 >= kernel.0 || padding.1 >= kernel.1 {
        return Err(Error::Param(format!(
            "pool padding {padding:?} must be below kernel {kernel:?}"
        )));
    }
    if h + 2 * padding.0 < kernel.0 || w + 2 * padding.1 < kernel.1 {
        return Err(Error::Param(format!(
            "pool kernel {kernel:?} exceeds padded input {h}x{w}"
        )));
    }
    Ok((
        (h + 2 * padding.0 - kernel.0) / stride.0 + 1,
        (w + 2 * padding.1 - kernel.1) / stride.1 + 1,
    ))
}

/// Per-window maximum; out-of-bounds taps behave as negative infinity.
pub fn maxpool2d(
    input: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let s = input.shape();
    let (oh, ow) = pool_output_hw(s.h, s.w, kernel, stride, padding)?;
    let mut out = Tensor::zeros((s.n, s.c, oh, ow))?;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            let base = out.offset(n, c, 0, 0);
            let dst = &mut out.data_mut()[base..base + oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    for ky in 0..kernel.0 {
                        let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                        for kx in 0..kernel.1 {
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            best = best.max(row[ix as usize]);
                        }
                    }
                    dst[oy * ow + ox] = best;
                }
            }
        }
    }
    Ok(out)
}

/// Per-window mean with zero padding; the divisor is always kh*kw, padded
/// taps included.
pub fn avgpool2d(
    input: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let s = input.shape();
    let (oh, ow) = pool_output_hw(s.h, s.w, kernel, stride, padding)?;
    let inv = 1.0f32 / (kernel.0 * kernel.1) as f32;
    let mut out = Tensor::zeros((s.n, s.c, oh, ow))?;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            let base = out.offset(n, c, 0, 0);
            let dst = &mut out.data_mut()[base..base + oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ky in 0..kernel.0 {
                        let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                        for kx in 0..kernel.1 {
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            acc += row[ix as usize];
                        }
                    }
                    dst[oy * ow + ox] = acc * inv;
                }
            }
        }
    }
    Ok(out)
}

/// Chained spatial-pyramid block: 1x1 conv halving channels, three chained
/// odd-kernel stride-1 maxpools, concat of all four stages, 1x1 conv back to
/// the input width. Spatial extent is preserved.
pub fn sppf(
    input: &Tensor,
    cv1_weight: &Tensor,
    cv1_bias: &[f32],
    cv2_weight: &Tensor,
    cv2_bias: &[f32],
    pool_kernel: usize,
) -> Result<Tensor> {
    let c = input.shape().c;
    if c % 2 != 0 {
        return Err(Error::Param(format!(
            "spatial-pyramid block needs even channels, got {c}"
        )));
    }
    if pool_kernel % 2 == 0 {
        return Err(Error::Param(format!(
            "pool kernel must be odd to preserve extent, got {pool_kernel}"
        )));
    }
    let mid = c / 2;
    let x = conv2d(input, cv1_weight, Some(cv1_bias), &ConvParams::pointwise(c, mid))?;
    let pad = pool_kernel / 2;
    let k = (pool_kernel, pool_kernel);
    let p1 = maxpool2d(&x, k, (1, 1), (pad, pad))?;
    let p2 = maxpool2d(&p1, k, (1, 1), (pad, pad))?;
    let p3 = maxpool2d(&p2, k, (1, 1), (pad, pad))?;
    let cat = concat_channels(&[&x, &p1, &p2, &p3])?;
    conv2d(&cat, cv2_weight, Some(cv2_bias), &ConvParams::pointwise(4 * mid, c))
}

/// Space-to-depth 2x2 slice: (n, c, h, w) -> (n, 4c, h/2, w/2). Channel
/// blocks in order (even row, even col), (even row, odd col),
/// (odd row, even col), (odd row, odd col).
pub fn focus_slice(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Param(format!(
            "space-to-depth slice needs even spatial extents, got {}x{}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros((s.n, 4 * s.c, oh, ow))?;
    let offsets = [(0usize, 0usize), (0, 1), (1, 0), (1, 1)];
    for n in 0..s.n {
        for (b, (dy, dx)) in offsets.iter().enumerate() {
            for c in 0..s.c {
                let src = input.plane(n, c);
                let base = out.offset(n, b * s.c + c, 0, 0);
                let dst = &mut out.data_mut()[base..base + oh * ow];
                for y in 0..oh {
                    for x in 0..ow {
                        dst[y * ow + x] = src[(2 * y + dy) * s.w + (2 * x + dx)];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour 2x upsample: each pixel becomes a 2x2 block.
pub fn upsample_nearest2x(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let mut out = Tensor::zeros((s.n, s.c, s.h * 2, s.w * 2))?;
    let (oh, ow) = (s.h * 2, s.w * 2);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let base = out.offset(n, c, 0, 0);
            let dst = &mut out.data_mut()[base..base + oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / 2) * s.w + (x / 2)];
                }
            }
        }
    }
    Ok(out)
}
