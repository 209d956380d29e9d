//! Parameter and multiply-accumulate counting over layer records.
//!
//! The analyzer walks the same shape-annotated records the executor runs,
//! so counts cannot drift from the executed topology. Conventions: a MAC is
//! one multiply-accumulate inside a convolution core or a fusion mix;
//! element-wise work that follows a layer (bias or folded-normalization
//! shift, residual adds, the fusion normalizer) is tallied separately as
//! `post_ops`; pooling comparisons, shuffles, slicing, and activations are
//! counted as free data movement, matching how lightweight-architecture
//! budgets are usually reported.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::tensor::Shape;

use super::graph::{Graph, LayerRecord, OpKind};

/// Cost of one layer record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub post_ops: u64,
}

/// Sums over a set of layers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostTotals {
    pub params: u64,
    pub macs: u64,
    pub post_ops: u64,
}

/// Per-layer costs plus their total.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub totals: CostTotals,
}

fn numel(shape: Shape) -> u64 {
    shape.numel() as u64
}

fn conv_cost(rec: &LayerRecord, params: &ConvParams, bias: bool, bn: bool) -> Result<LayerCost> {
    if params.groups == 0 || params.in_channels % params.groups != 0 {
        return Err(Error::Analysis(format!(
            "layer '{}': invalid group count {}",
            rec.name, params.groups
        )));
    }
    let core = params.out_channels as u64
        * (params.in_channels / params.groups) as u64
        * params.kernel.0 as u64
        * params.kernel.1 as u64;
    let out = rec.out_shape;
    let spatial = (out.n * out.h * out.w) as u64;
    let mut p = core;
    if bias {
        p += params.out_channels as u64;
    }
    if bn {
        p += 2 * params.out_channels as u64;
    }
    // Bias and normalization fold into one shift per output element.
    let post = if bias || bn { numel(out) } else { 0 };
    Ok(LayerCost {
        name: rec.name.clone(),
        params: p,
        macs: core * spatial,
        post_ops: post,
    })
}

/// Counts one record.
pub fn layer_cost(rec: &LayerRecord) -> Result<LayerCost> {
    let zero = |name: &str| LayerCost {
        name: name.to_string(),
        params: 0,
        macs: 0,
        post_ops: 0,
    };
    match &rec.kind {
        OpKind::Conv { params, bias, bn, .. } => conv_cost(rec, params, bias.is_some(), bn.is_some()),
        OpKind::Fusion { .. } => {
            let k = rec.inputs.len() as u64;
            Ok(LayerCost {
                name: rec.name.clone(),
                params: k,
                macs: k * numel(rec.out_shape),
                post_ops: numel(rec.out_shape),
            })
        }
        OpKind::Add => Ok(LayerCost {
            post_ops: numel(rec.out_shape),
            ..zero(&rec.name)
        }),
        OpKind::Input
        | OpKind::MaxPool { .. }
        | OpKind::AvgPool { .. }
        | OpKind::Focus
        | OpKind::Upsample2x
        | OpKind::Shuffle { .. }
        | OpKind::SplitFirst
        | OpKind::SplitSecond
        | OpKind::Concat
        | OpKind::Activation { .. } => Ok(zero(&rec.name)),
    }
}

/// Counts a set of records (e.g. a whole graph or one name-prefixed
/// section) and totals them.
pub fn count_costs<'a>(records: impl IntoIterator<Item = &'a LayerRecord>) -> Result<CostReport> {
    let mut layers = Vec::new();
    let mut totals = CostTotals::default();
    for rec in records {
        let cost = layer_cost(rec)?;
        totals.params += cost.params;
        totals.macs += cost.macs;
        totals.post_ops += cost.post_ops;
        layers.push(cost);
    }
    Ok(CostReport { layers, totals })
}

/// Totals for the records whose names start with `prefix`.
pub fn prefix_totals(graph: &Graph, prefix: &str) -> Result<CostTotals> {
    let mut totals = CostTotals::default();
    for rec in graph.records_with_prefix(prefix) {
        let cost = layer_cost(rec)?;
        totals.params += cost.params;
        totals.macs += cost.macs;
        totals.post_ops += cost.post_ops;
    }
    Ok(totals)
}

/// MACs of a depthwise-then-pointwise pair versus one standard
/// convolution of the same receptive field, both measured through the
/// analyzer on real layer records rather than closed-form arithmetic.
pub fn separable_pair_macs(
    kernel: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> Result<(u64, u64)> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::Param(format!("kernel must be odd, got {kernel}")));
    }
    let pad = kernel / 2;
    let mut sep = Graph::new();
    let i = sep.add_input("in", Shape::new(1, c_in, h, w))?;
    let d = sep.add(
        "dw",
        OpKind::Conv {
            params: ConvParams::depthwise(c_in, kernel, 1, pad),
            weight: "dw.weight".into(),
            bias: None,
            bn: None,
            act: crate::ops::Act::Identity,
        },
        &[i],
    )?;
    sep.add(
        "pw",
        OpKind::Conv {
            params: ConvParams::pointwise(c_in, c_out),
            weight: "pw.weight".into(),
            bias: None,
            bn: None,
            act: crate::ops::Act::Identity,
        },
        &[d],
    )?;

    let mut std = Graph::new();
    let i = std.add_input("in", Shape::new(1, c_in, h, w))?;
    std.add(
        "conv",
        OpKind::Conv {
            params: ConvParams::new(c_in, c_out, (kernel, kernel), (1, 1), (pad, pad), 1),
            weight: "conv.weight".into(),
            bias: None,
            bn: None,
            act: crate::ops::Act::Identity,
        },
        &[i],
    )?;

    let sep_macs = count_costs(sep.records())?.totals.macs;
    let std_macs = count_costs(std.records())?.totals.macs;
    Ok((sep_macs, std_macs))
}

/// Exact-integer check of the cost ratio between a separable pair and a
/// standard convolution: sep * k^2 * c_out == std * (k^2 + c_out).
pub fn separable_identity_holds(kernel: usize, c_in: usize, c_out: usize, h: usize, w: usize) -> Result<bool> {
    let (sep, std) = separable_pair_macs(kernel, c_in, c_out, h, w)?;
    let k2 = (kernel * kernel) as u128;
    let lhs = sep as u128 * k2 * c_out as u128;
    let rhs = std as u128 * (k2 + c_out as u128);
    Ok(lhs == rhs)
}
