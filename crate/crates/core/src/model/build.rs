//! Graph builders for the detector and for the heavier reference network
//! used in cost comparisons.
//!
//! The detector pairs a lightweight shuffle-style backbone (stem, three
//! stages of split/shuffle units, optional spatial pyramid) with a
//! three-scale feature pyramid neck using normalized weighted fusion, and
//! 1x1 prediction heads. The reference network is a focus stem followed by
//! wide cross-stage blocks; it exists only to be analyzed, never executed.

use crate::error::{Error, Result};
use crate::ops::{Act, ConvParams};
use crate::postprocess::AnchorSet;
use crate::tensor::{Shape, Tensor};

use super::graph::{BnNames, Graph, OpKind};
use super::weights::WeightStore;
use super::{ModelConfig, UnitStyle};

/// Convolution followed by folded batch normalization (no standalone bias).
fn add_conv_bn(
    g: &mut Graph,
    name: &str,
    input: usize,
    params: ConvParams,
    act: Act,
    bn_epsilon: f32,
) -> Result<usize> {
    g.add(
        name,
        OpKind::Conv {
            params,
            weight: format!("{name}.weight"),
            bias: None,
            bn: Some(BnNames::with_prefix(&format!("{name}.bn"), bn_epsilon)),
            act,
        },
        &[input],
    )
}

/// Plain convolution with a bias vector and no normalization.
fn add_conv_bias(g: &mut Graph, name: &str, input: usize, params: ConvParams, act: Act) -> Result<usize> {
    g.add(
        name,
        OpKind::Conv {
            params,
            weight: format!("{name}.weight"),
            bias: Some(format!("{name}.bias")),
            bn: None,
            act,
        },
        &[input],
    )
}

/// Split/shuffle unit. Stride 1 keeps half the channels untouched and runs
/// the other half through pointwise-depthwise-pointwise; stride 2 runs two
/// downsampling branches over the full input. Both end with a concat and a
/// two-group channel shuffle.
pub(super) fn add_unit_v2(
    g: &mut Graph,
    prefix: &str,
    input: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    bn_epsilon: f32,
) -> Result<usize> {
    let cat = match stride {
        1 => {
            if c_in != c_out {
                return Err(Error::Param(format!(
                    "{prefix}: stride-1 unit must preserve channels, got {c_in} -> {c_out}"
                )));
            }
            if c_in % 2 != 0 {
                return Err(Error::Param(format!(
                    "{prefix}: stride-1 unit needs even channels, got {c_in}"
                )));
            }
            let half = c_in / 2;
            let left = g.add(format!("{prefix}.split_a"), OpKind::SplitFirst, &[input])?;
            let right = g.add(format!("{prefix}.split_b"), OpKind::SplitSecond, &[input])?;
            let r = add_conv_bn(
                g,
                &format!("{prefix}.right.pw1"),
                right,
                ConvParams::pointwise(half, half),
                Act::Relu,
                bn_epsilon,
            )?;
            let r = add_conv_bn(
                g,
                &format!("{prefix}.right.dw"),
                r,
                ConvParams::depthwise(half, 3, 1, 1),
                Act::Identity,
                bn_epsilon,
            )?;
            let r = add_conv_bn(
                g,
                &format!("{prefix}.right.pw2"),
                r,
                ConvParams::pointwise(half, half),
                Act::Relu,
                bn_epsilon,
            )?;
            g.add(format!("{prefix}.concat"), OpKind::Concat, &[left, r])?
        }
        2 => {
            if c_out % 2 != 0 {
                return Err(Error::Param(format!(
                    "{prefix}: stride-2 unit needs an even output width, got {c_out}"
                )));
            }
            let half = c_out / 2;
            let l = add_conv_bn(
                g,
                &format!("{prefix}.left.dw"),
                input,
                ConvParams::depthwise(c_in, 3, 2, 1),
                Act::Identity,
                bn_epsilon,
            )?;
            let l = add_conv_bn(
                g,
                &format!("{prefix}.left.pw"),
                l,
                ConvParams::pointwise(c_in, half),
                Act::Relu,
                bn_epsilon,
            )?;
            let r = add_conv_bn(
                g,
                &format!("{prefix}.right.pw1"),
                input,
                ConvParams::pointwise(c_in, half),
                Act::Relu,
                bn_epsilon,
            )?;
            let r = add_conv_bn(
                g,
                &format!("{prefix}.right.dw"),
                r,
                ConvParams::depthwise(half, 3, 2, 1),
                Act::Identity,
                bn_epsilon,
            )?;
            let r = add_conv_bn(
                g,
                &format!("{prefix}.right.pw2"),
                r,
                ConvParams::pointwise(half, half),
                Act::Relu,
                bn_epsilon,
            )?;
            g.add(format!("{prefix}.concat"), OpKind::Concat, &[l, r])?
        }
        s => {
            return Err(Error::Param(format!("{prefix}: unit stride must be 1 or 2, got {s}")));
        }
    };
    g.add(format!("{prefix}.shuffle"), OpKind::Shuffle { groups: 2 }, &[cat])
}

/// Grouped-pointwise unit: grouped 1x1, shuffle, depthwise 3x3, grouped
/// 1x1, then a residual add (stride 1) or an average-pool shortcut concat
/// (stride 2), finished with a ReLU over the merged result.
pub(super) fn add_unit_v1(
    g: &mut Graph,
    prefix: &str,
    input: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    groups: usize,
    bn_epsilon: f32,
) -> Result<usize> {
    if groups == 0 {
        return Err(Error::Param(format!("{prefix}: groups must be positive")));
    }
    let branch_out = match stride {
        1 => {
            if c_in != c_out {
                return Err(Error::Param(format!(
                    "{prefix}: stride-1 unit must preserve channels, got {c_in} -> {c_out}"
                )));
            }
            c_out
        }
        2 => {
            if c_out <= c_in {
                return Err(Error::Param(format!(
                    "{prefix}: stride-2 unit needs c_out > c_in, got {c_in} -> {c_out}"
                )));
            }
            c_out - c_in
        }
        s => {
            return Err(Error::Param(format!("{prefix}: unit stride must be 1 or 2, got {s}")));
        }
    };
    // Bottleneck width: a quarter of the output, rounded up so the group
    // count divides it.
    let mid = (c_out / 4).max(1).div_ceil(groups) * groups;
    for (what, c) in [("input width", c_in), ("branch width", branch_out)] {
        if c % groups != 0 {
            return Err(Error::Param(format!(
                "{prefix}: groups {groups} must divide {what} {c}"
            )));
        }
    }
    let x = add_conv_bn(
        g,
        &format!("{prefix}.gconv1"),
        input,
        ConvParams::new(c_in, mid, (1, 1), (1, 1), (0, 0), groups),
        Act::Relu,
        bn_epsilon,
    )?;
    let x = g.add(format!("{prefix}.shuffle"), OpKind::Shuffle { groups }, &[x])?;
    let x = add_conv_bn(
        g,
        &format!("{prefix}.dw"),
        x,
        ConvParams::depthwise(mid, 3, stride, 1),
        Act::Identity,
        bn_epsilon,
    )?;
    let branch = add_conv_bn(
        g,
        &format!("{prefix}.gconv2"),
        x,
        ConvParams::new(mid, branch_out, (1, 1), (1, 1), (0, 0), groups),
        Act::Identity,
        bn_epsilon,
    )?;
    let merged = if stride == 1 {
        g.add(format!("{prefix}.add"), OpKind::Add, &[input, branch])?
    } else {
        let shortcut = g.add(
            format!("{prefix}.shortcut_pool"),
            OpKind::AvgPool {
                kernel: (3, 3),
                stride: (2, 2),
                padding: (1, 1),
            },
            &[input],
        )?;
        g.add(format!("{prefix}.concat"), OpKind::Concat, &[shortcut, branch])?
    };
    g.add(
        format!("{prefix}.relu"),
        OpKind::Activation { kind: Act::Relu },
        &[merged],
    )
}

/// Spatial pyramid with one shared kernel applied three times in series;
/// the two projections are plain biased convolutions.
fn add_sppf(g: &mut Graph, prefix: &str, input: usize, channels: usize, pool_kernel: usize) -> Result<usize> {
    if channels % 2 != 0 {
        return Err(Error::Param(format!(
            "{prefix}: pyramid needs even channels, got {channels}"
        )));
    }
    if pool_kernel % 2 == 0 {
        return Err(Error::Param(format!(
            "{prefix}: pool kernel must be odd, got {pool_kernel}"
        )));
    }
    let half = channels / 2;
    let pad = pool_kernel / 2;
    let cv1 = add_conv_bias(
        g,
        &format!("{prefix}.cv1"),
        input,
        ConvParams::pointwise(channels, half),
        Act::Identity,
    )?;
    let mut pools = [0usize; 3];
    let mut prev = cv1;
    for (i, slot) in pools.iter_mut().enumerate() {
        prev = g.add(
            format!("{prefix}.pool{}", i + 1),
            OpKind::MaxPool {
                kernel: (pool_kernel, pool_kernel),
                stride: (1, 1),
                padding: (pad, pad),
            },
            &[prev],
        )?;
        *slot = prev;
    }
    let cat = g.add(
        format!("{prefix}.concat"),
        OpKind::Concat,
        &[cv1, pools[0], pools[1], pools[2]],
    )?;
    add_conv_bias(
        g,
        &format!("{prefix}.cv2"),
        cat,
        ConvParams::pointwise(half * 4, channels),
        Act::Identity,
    )
}

/// Appends the backbone and returns the three pyramid feature records
/// (strides 8, 16, 32 relative to the input).
pub(super) fn add_backbone(g: &mut Graph, cfg: &ModelConfig, input: usize) -> Result<[usize; 3]> {
    let eps = cfg.bn_epsilon;
    let c0 = cfg.stage_channels[0];
    let stem = add_conv_bn(
        g,
        "backbone.stem.conv",
        input,
        ConvParams::new(3, c0, (3, 3), (2, 2), (1, 1), 1),
        Act::Relu,
        eps,
    )?;
    let mut x = g.add(
        "backbone.stem.pool",
        OpKind::MaxPool {
            kernel: (3, 3),
            stride: (2, 2),
            padding: (1, 1),
        },
        &[stem],
    )?;
    let mut outs = Vec::with_capacity(cfg.stage_repeats.len());
    let mut c_in = c0;
    for (si, (&c_out, &reps)) in cfg.stage_channels[1..].iter().zip(&cfg.stage_repeats).enumerate() {
        for u in 0..reps {
            let stride = if u == 0 { 2 } else { 1 };
            let unit_in = if u == 0 { c_in } else { c_out };
            let prefix = format!("backbone.stage{}.unit{u}", si + 1);
            x = match cfg.unit_style {
                UnitStyle::V2Split => add_unit_v2(g, &prefix, x, unit_in, c_out, stride, eps)?,
                UnitStyle::V1Grouped => {
                    add_unit_v1(g, &prefix, x, unit_in, c_out, stride, cfg.group_count, eps)?
                }
            };
        }
        c_in = c_out;
        outs.push(x);
    }
    let mut feats = [outs[0], outs[1], outs[2]];
    if cfg.sppf_enabled {
        feats[2] = add_sppf(g, "backbone.sppf", feats[2], c_in, 5)?;
    }
    Ok(feats)
}

/// Appends the fusion neck and the three prediction heads, returning the
/// head records ordered fine to coarse.
pub(super) fn add_neck_head(g: &mut Graph, cfg: &ModelConfig, feats: [usize; 3]) -> Result<[usize; 3]> {
    let eps = cfg.bn_epsilon;
    let feps = cfg.fusion_epsilon;
    let w = cfg.neck_width;
    let chans: Vec<usize> = feats.iter().map(|&f| g.records()[f].out_shape.c).collect();

    let lat3 = add_conv_bn(g, "neck.lat3", feats[0], ConvParams::pointwise(chans[0], w), Act::Silu, eps)?;
    let lat4 = add_conv_bn(g, "neck.lat4", feats[1], ConvParams::pointwise(chans[1], w), Act::Silu, eps)?;
    let lat5 = add_conv_bn(g, "neck.lat5", feats[2], ConvParams::pointwise(chans[2], w), Act::Silu, eps)?;

    let k3 = |c: usize, s: usize| ConvParams::new(c, c, (3, 3), (s, s), (1, 1), 1);
    let fuse = |g: &mut Graph, name: &str, a: usize, b: usize| {
        g.add(
            name,
            OpKind::Fusion {
                weights: format!("{name}.w"),
                epsilon: feps,
            },
            &[a, b],
        )
    };

    let up5 = g.add("neck.up5", OpKind::Upsample2x, &[lat5])?;
    let fuse4 = fuse(g, "neck.fuse4", lat4, up5)?;
    let td4 = add_conv_bn(g, "neck.td4", fuse4, k3(w, 1), Act::Silu, eps)?;
    let up4 = g.add("neck.up4", OpKind::Upsample2x, &[td4])?;
    let fuse3 = fuse(g, "neck.fuse3", lat3, up4)?;
    let td3 = add_conv_bn(g, "neck.td3", fuse3, k3(w, 1), Act::Silu, eps)?;

    let down3 = add_conv_bn(g, "neck.down3", td3, k3(w, 2), Act::Silu, eps)?;
    let fuse4b = fuse(g, "neck.fuse4b", td4, down3)?;
    let pan4 = add_conv_bn(g, "neck.pan4", fuse4b, k3(w, 1), Act::Silu, eps)?;
    let down4 = add_conv_bn(g, "neck.down4", pan4, k3(w, 2), Act::Silu, eps)?;
    let fuse5 = fuse(g, "neck.fuse5", lat5, down4)?;
    let pan5 = add_conv_bn(g, "neck.pan5", fuse5, k3(w, 1), Act::Silu, eps)?;

    let head_c = AnchorSet::PER_SCALE * (5 + cfg.class_count);
    let p3 = add_conv_bias(g, "head.p3", td3, ConvParams::pointwise(w, head_c), Act::Identity)?;
    let p4 = add_conv_bias(g, "head.p4", pan4, ConvParams::pointwise(w, head_c), Act::Identity)?;
    let p5 = add_conv_bias(g, "head.p5", pan5, ConvParams::pointwise(w, head_c), Act::Identity)?;
    Ok([p3, p4, p5])
}

/// A complete detector graph plus the record ids a caller needs.
#[derive(Debug, Clone)]
pub struct DetectorGraph {
    pub graph: Graph,
    pub input: usize,
    pub features: [usize; 3],
    pub heads: [usize; 3],
}

fn check_input_extents(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Param(format!(
            "input extents must be positive multiples of 32, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Builds the full detector graph for a given input size.
pub fn build_detector_graph(cfg: &ModelConfig, input_hw: (usize, usize)) -> Result<DetectorGraph> {
    cfg.validate()?;
    check_input_extents(input_hw.0, input_hw.1)?;
    let mut g = Graph::new();
    let input = g.add_input("image", Shape::new(1, 3, input_hw.0, input_hw.1))?;
    let features = add_backbone(&mut g, cfg, input)?;
    let heads = add_neck_head(&mut g, cfg, features)?;
    Ok(DetectorGraph {
        graph: g,
        input,
        features,
        heads,
    })
}

/// Runs the full detector on one preprocessed image, returning the three
/// raw head maps ordered fine to coarse.
pub fn run_detector(cfg: &ModelConfig, store: &WeightStore, image: &Tensor) -> Result<[Tensor; 3]> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Shape(format!("detector expects a (1, 3, h, w) image, got {s}")));
    }
    let det = build_detector_graph(cfg, (s.h, s.w))?;
    let mut outs = det.graph.run(store, &[image], &det.heads)?;
    let p5 = outs.pop().expect("three wanted records");
    let p4 = outs.pop().expect("three wanted records");
    let p3 = outs.pop().expect("three wanted records");
    Ok([p3, p4, p5])
}

/// Runs just the backbone, returning the stride 8/16/32 feature maps.
pub fn build_backbone(cfg: &ModelConfig, store: &WeightStore, image: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    cfg.validate()?;
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Shape(format!("backbone expects a (1, 3, h, w) image, got {s}")));
    }
    check_input_extents(s.h, s.w)?;
    let mut g = Graph::new();
    let input = g.add_input("image", s)?;
    let feats = add_backbone(&mut g, cfg, input)?;
    let mut outs = g.run(store, &[image], &feats)?;
    let c5 = outs.pop().expect("three wanted records");
    let c4 = outs.pop().expect("three wanted records");
    let c3 = outs.pop().expect("three wanted records");
    Ok((c3, c4, c5))
}

/// Runs the neck and heads over externally computed pyramid features.
pub fn build_neck_head(
    cfg: &ModelConfig,
    store: &WeightStore,
    c3: &Tensor,
    c4: &Tensor,
    c5: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    cfg.validate()?;
    let mut g = Graph::new();
    let i3 = g.add_input("feat_c3", c3.shape())?;
    let i4 = g.add_input("feat_c4", c4.shape())?;
    let i5 = g.add_input("feat_c5", c5.shape())?;
    let heads = add_neck_head(&mut g, cfg, [i3, i4, i5])?;
    let mut outs = g.run(store, &[c3, c4, c5], &heads)?;
    let p5 = outs.pop().expect("three wanted records");
    let p4 = outs.pop().expect("three wanted records");
    let p3 = outs.pop().expect("three wanted records");
    Ok((p3, p4, p5))
}

/// Runs one split/shuffle unit over a tensor using weights under `prefix`.
pub fn shuffle_unit_v2(
    input: &Tensor,
    store: &WeightStore,
    prefix: &str,
    stride: usize,
    c_out: usize,
    bn_epsilon: f32,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let i = g.add_input("unit_input", input.shape())?;
    let o = add_unit_v2(&mut g, prefix, i, input.shape().c, c_out, stride, bn_epsilon)?;
    Ok(g.run(store, &[input], &[o])?.remove(0))
}

/// Runs one grouped-pointwise unit over a tensor using weights under
/// `prefix`.
pub fn shuffle_unit_v1(
    input: &Tensor,
    store: &WeightStore,
    prefix: &str,
    stride: usize,
    c_out: usize,
    groups: usize,
    bn_epsilon: f32,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let i = g.add_input("unit_input", input.shape())?;
    let o = add_unit_v1(&mut g, prefix, i, input.shape().c, c_out, stride, groups, bn_epsilon)?;
    Ok(g.run(store, &[input], &[o])?.remove(0))
}

const BASELINE_BN_EPSILON: f32 = 1e-5;

/// Cross-stage block: a projected main path of residual bottlenecks next
/// to a projected bypass, concatenated and re-projected.
fn add_c3_block(g: &mut Graph, prefix: &str, input: usize, channels: usize, n: usize) -> Result<usize> {
    let half = channels / 2;
    let eps = BASELINE_BN_EPSILON;
    let mut chain = add_conv_bn(
        g,
        &format!("{prefix}.cv1"),
        input,
        ConvParams::pointwise(channels, half),
        Act::Silu,
        eps,
    )?;
    let bypass = add_conv_bn(
        g,
        &format!("{prefix}.cv2"),
        input,
        ConvParams::pointwise(channels, half),
        Act::Silu,
        eps,
    )?;
    for i in 0..n {
        let b = add_conv_bn(
            g,
            &format!("{prefix}.m{i}.cv1"),
            chain,
            ConvParams::pointwise(half, half),
            Act::Silu,
            eps,
        )?;
        let b = add_conv_bn(
            g,
            &format!("{prefix}.m{i}.cv2"),
            b,
            ConvParams::new(half, half, (3, 3), (1, 1), (1, 1), 1),
            Act::Silu,
            eps,
        )?;
        chain = g.add(format!("{prefix}.m{i}.add"), OpKind::Add, &[chain, b])?;
    }
    let cat = g.add(format!("{prefix}.concat"), OpKind::Concat, &[chain, bypass])?;
    add_conv_bn(
        g,
        &format!("{prefix}.cv3"),
        cat,
        ConvParams::pointwise(channels, channels),
        Act::Silu,
        eps,
    )
}

/// Parallel spatial pyramid with three kernel sizes.
fn add_spp_block(g: &mut Graph, prefix: &str, input: usize, channels: usize, kernels: [usize; 3]) -> Result<usize> {
    let half = channels / 2;
    let eps = BASELINE_BN_EPSILON;
    let cv1 = add_conv_bn(
        g,
        &format!("{prefix}.cv1"),
        input,
        ConvParams::pointwise(channels, half),
        Act::Silu,
        eps,
    )?;
    let mut parts = vec![cv1];
    for k in kernels {
        parts.push(g.add(
            format!("{prefix}.pool{k}"),
            OpKind::MaxPool {
                kernel: (k, k),
                stride: (1, 1),
                padding: (k / 2, k / 2),
            },
            &[cv1],
        )?);
    }
    let cat = g.add(format!("{prefix}.concat"), OpKind::Concat, &parts)?;
    add_conv_bn(
        g,
        &format!("{prefix}.cv2"),
        cat,
        ConvParams::pointwise(half * 4, channels),
        Act::Silu,
        eps,
    )
}

/// Reference backbone used as the cost yardstick: focus stem to 64
/// channels, four stride-2 stages doubling to 1024, cross-stage blocks of
/// depth 3/9/9/3, and a parallel spatial pyramid before the last block.
pub fn build_baseline_graph(input_hw: (usize, usize)) -> Result<Graph> {
    check_input_extents(input_hw.0, input_hw.1)?;
    let eps = BASELINE_BN_EPSILON;
    let mut g = Graph::new();
    let input = g.add_input("baseline.image", Shape::new(1, 3, input_hw.0, input_hw.1))?;
    let focus = g.add("baseline.focus.slice", OpKind::Focus, &[input])?;
    let x = add_conv_bn(
        &mut g,
        "baseline.focus.conv",
        focus,
        ConvParams::new(12, 64, (3, 3), (1, 1), (1, 1), 1),
        Act::Silu,
        eps,
    )?;
    let down = |c_in: usize, c_out: usize| ConvParams::new(c_in, c_out, (3, 3), (2, 2), (1, 1), 1);
    let x = add_conv_bn(&mut g, "baseline.conv1", x, down(64, 128), Act::Silu, eps)?;
    let x = add_c3_block(&mut g, "baseline.c3_1", x, 128, 3)?;
    let x = add_conv_bn(&mut g, "baseline.conv2", x, down(128, 256), Act::Silu, eps)?;
    let x = add_c3_block(&mut g, "baseline.c3_2", x, 256, 9)?;
    let x = add_conv_bn(&mut g, "baseline.conv3", x, down(256, 512), Act::Silu, eps)?;
    let x = add_c3_block(&mut g, "baseline.c3_3", x, 512, 9)?;
    let x = add_conv_bn(&mut g, "baseline.conv4", x, down(512, 1024), Act::Silu, eps)?;
    let x = add_spp_block(&mut g, "baseline.spp", x, 1024, [5, 9, 13])?;
    add_c3_block(&mut g, "baseline.c3_4", x, 1024, 3)?;
    Ok(g)
}
