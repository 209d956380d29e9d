//! Declarative network graph: shape-annotated layer records built once and
//! then used three ways — executed for inference, walked for parameter and
//! multiply-accumulate counting, and validated against a weight store. One
//! definition, so the analyzer can never drift from what actually runs.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::ops::{self, Act, BnParams, ConvParams};
use crate::tensor::{Shape, Tensor};

use super::weights::WeightStore;

/// Names of the four per-channel batch-norm vectors attached to a
/// convolution record, plus the epsilon used when folding.
#[derive(Debug, Clone, PartialEq)]
pub struct BnNames {
    pub gamma: String,
    pub beta: String,
    pub mean: String,
    pub var: String,
    pub epsilon: f32,
}

impl BnNames {
    pub fn with_prefix(prefix: &str, epsilon: f32) -> Self {
        BnNames {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            mean: format!("{prefix}.mean"),
            var: format!("{prefix}.var"),
            epsilon,
        }
    }
}

/// What a layer record does.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// Graph input placeholder; tensors are supplied positionally at run
    /// time in record order.
    Input,
    Conv {
        params: ConvParams,
        weight: String,
        bias: Option<String>,
        bn: Option<BnNames>,
        act: Act,
    },
    MaxPool {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    AvgPool {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    Focus,
    Upsample2x,
    Shuffle {
        groups: usize,
    },
    /// First half of a channel split.
    SplitFirst,
    /// Second half of a channel split.
    SplitSecond,
    Concat,
    Add,
    /// Normalized weighted feature fusion over 2+ same-shaped inputs.
    Fusion {
        weights: String,
        epsilon: f32,
    },
    Activation {
        kind: Act,
    },
}

/// One node of the graph: operation, producers, and shape annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub kind: OpKind,
    pub inputs: Vec<usize>,
    pub in_shapes: Vec<Shape>,
    pub out_shape: Shape,
}

/// An append-only DAG of layer records; every consumed tensor is produced
/// by an earlier record, so cycles cannot be expressed.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    records: Vec<LayerRecord>,
    names: HashSet<String>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn records(&self) -> &[LayerRecord] {
        &self.records
    }

    /// Records whose names start with `prefix` (for sectioned cost totals).
    pub fn records_with_prefix(&self, prefix: &str) -> Vec<&LayerRecord> {
        self.records
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .collect()
    }

    pub fn add_input(&mut self, name: impl Into<String>, shape: Shape) -> Result<usize> {
        self.push(LayerRecord {
            name: name.into(),
            kind: OpKind::Input,
            inputs: Vec::new(),
            in_shapes: Vec::new(),
            out_shape: shape,
        })
    }

    /// Appends a record, inferring and annotating its output shape.
    pub fn add(&mut self, name: impl Into<String>, kind: OpKind, inputs: &[usize]) -> Result<usize> {
        let name = name.into();
        let mut in_shapes = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let rec = self.records.get(id).ok_or_else(|| {
                Error::Param(format!("layer '{name}' consumes unknown record {id}"))
            })?;
            in_shapes.push(rec.out_shape);
        }
        let out_shape = infer_shape(&name, &kind, &in_shapes)?;
        self.push(LayerRecord {
            name,
            kind,
            inputs: inputs.to_vec(),
            in_shapes,
            out_shape,
        })
    }

    fn push(&mut self, record: LayerRecord) -> Result<usize> {
        if !self.names.insert(record.name.clone()) {
            return Err(Error::Param(format!("duplicate layer name '{}'", record.name)));
        }
        self.records.push(record);
        Ok(self.records.len() - 1)
    }

    /// Executes the graph over the given inputs (matched positionally to
    /// the Input records) and returns the tensors of the `wanted` records.
    /// Intermediate tensors are dropped as soon as no later layer needs
    /// them.
    pub fn run(&self, store: &WeightStore, inputs: &[&Tensor], wanted: &[usize]) -> Result<Vec<Tensor>> {
        let input_ids: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r.kind, OpKind::Input))
            .map(|(i, _)| i)
            .collect();
        if inputs.len() != input_ids.len() {
            return Err(Error::Param(format!(
                "graph has {} inputs, {} provided",
                input_ids.len(),
                inputs.len()
            )));
        }
        for (&id, t) in input_ids.iter().zip(inputs) {
            if t.shape() != self.records[id].out_shape {
                return Err(Error::Shape(format!(
                    "input '{}' expects {}, got {}",
                    self.records[id].name,
                    self.records[id].out_shape,
                    t.shape()
                )));
            }
        }
        for &w in wanted {
            if w >= self.records.len() {
                return Err(Error::Param(format!("wanted record {w} does not exist")));
            }
        }

        // Last consumer of each record; wanted outputs live to the end.
        let mut last_use = vec![0usize; self.records.len()];
        for (i, rec) in self.records.iter().enumerate() {
            for &id in &rec.inputs {
                last_use[id] = last_use[id].max(i);
            }
        }
        for &w in wanted {
            last_use[w] = usize::MAX;
        }

        let mut slots: Vec<Option<Tensor>> = vec![None; self.records.len()];
        let mut next_input = 0usize;
        for (i, rec) in self.records.iter().enumerate() {
            let produced = match &rec.kind {
                OpKind::Input => {
                    let t = inputs[next_input].clone();
                    next_input += 1;
                    t
                }
                _ => {
                    let args: Vec<&Tensor> = rec
                        .inputs
                        .iter()
                        .map(|&id| {
                            slots[id].as_ref().ok_or_else(|| {
                                Error::Analysis(format!(
                                    "layer '{}' consumed an already-freed tensor",
                                    rec.name
                                ))
                            })
                        })
                        .collect::<Result<_>>()?;
                    execute_record(rec, &args, store)?
                }
            };
            if produced.shape() != rec.out_shape {
                return Err(Error::Analysis(format!(
                    "layer '{}': executed shape {} differs from annotated {}",
                    rec.name,
                    produced.shape(),
                    rec.out_shape
                )));
            }
            slots[i] = Some(produced);
            for &id in &rec.inputs {
                if last_use[id] == i {
                    slots[id] = None;
                }
            }
        }

        wanted
            .iter()
            .map(|&w| {
                slots[w]
                    .clone()
                    .ok_or_else(|| Error::Analysis(format!("wanted record {w} was freed")))
            })
            .collect()
    }
}

fn infer_shape(name: &str, kind: &OpKind, ins: &[Shape]) -> Result<Shape> {
    let arity = |want: usize| -> Result<()> {
        if ins.len() != want {
            return Err(Error::Param(format!(
                "layer '{name}' takes {want} inputs, got {}",
                ins.len()
            )));
        }
        Ok(())
    };
    match kind {
        OpKind::Input => Err(Error::Param(format!(
            "input record '{name}' must be added via add_input"
        ))),
        OpKind::Conv { params, .. } => {
            arity(1)?;
            let s = ins[0];
            if s.c != params.in_channels {
                return Err(Error::Shape(format!(
                    "layer '{name}': input has {} channels, expects {}",
                    s.c, params.in_channels
                )));
            }
            let (oh, ow) = params.output_hw(s.h, s.w)?;
            Ok(Shape::new(s.n, params.out_channels, oh, ow))
        }
        OpKind::MaxPool { kernel, stride, padding }
        | OpKind::AvgPool { kernel, stride, padding } => {
            arity(1)?;
            let s = ins[0];
            let (oh, ow) = ops::pool_output_hw(s.h, s.w, *kernel, *stride, *padding)?;
            Ok(Shape::new(s.n, s.c, oh, ow))
        }
        OpKind::Focus => {
            arity(1)?;
            let s = ins[0];
            if s.h % 2 != 0 || s.w % 2 != 0 {
                return Err(Error::Param(format!(
                    "layer '{name}': space-to-depth needs even extents, got {}x{}",
                    s.h, s.w
                )));
            }
            Ok(Shape::new(s.n, 4 * s.c, s.h / 2, s.w / 2))
        }
        OpKind::Upsample2x => {
            arity(1)?;
            let s = ins[0];
            Ok(Shape::new(s.n, s.c, s.h * 2, s.w * 2))
        }
        OpKind::Shuffle { groups } => {
            arity(1)?;
            let s = ins[0];
            if *groups == 0 || s.c % groups != 0 {
                return Err(Error::Param(format!(
                    "layer '{name}': groups {groups} must divide channels {}",
                    s.c
                )));
            }
            Ok(s)
        }
        OpKind::SplitFirst | OpKind::SplitSecond => {
            arity(1)?;
            let s = ins[0];
            if s.c % 2 != 0 {
                return Err(Error::Param(format!(
                    "layer '{name}': split needs even channels, got {}",
                    s.c
                )));
            }
            Ok(Shape::new(s.n, s.c / 2, s.h, s.w))
        }
        OpKind::Concat => {
            if ins.len() < 2 {
                return Err(Error::Param(format!("layer '{name}': concat needs 2+ inputs")));
            }
            let first = ins[0];
            let mut c = 0;
            for s in ins {
                if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                    return Err(Error::Shape(format!(
                        "layer '{name}': concat operands disagree: {s} vs {first}"
                    )));
                }
                c += s.c;
            }
            Ok(Shape::new(first.n, c, first.h, first.w))
        }
        OpKind::Add => {
            arity(2)?;
            if ins[0] != ins[1] {
                return Err(Error::Shape(format!(
                    "layer '{name}': add operands differ: {} vs {}",
                    ins[0], ins[1]
                )));
            }
            Ok(ins[0])
        }
        OpKind::Fusion { .. } => {
            if ins.len() < 2 {
                return Err(Error::Param(format!("layer '{name}': fusion needs 2+ inputs")));
            }
            for s in ins {
                if *s != ins[0] {
                    return Err(Error::Shape(format!(
                        "layer '{name}': fusion operands differ: {s} vs {}",
                        ins[0]
                    )));
                }
            }
            Ok(ins[0])
        }
        OpKind::Activation { .. } => {
            arity(1)?;
            Ok(ins[0])
        }
    }
}

/// Fetches and shape-checks the conv weight for a record.
pub(super) fn fetch_conv_weight<'s>(
    store: &'s WeightStore,
    name: &str,
    params: &ConvParams,
) -> Result<&'s Tensor> {
    let w = store.get_required(name)?;
    let expect = Shape::new(
        params.out_channels,
        params.in_channels / params.groups,
        params.kernel.0,
        params.kernel.1,
    );
    if w.shape() != expect {
        return Err(Error::Store(format!(
            "weight '{name}' has shape {}, expected {expect}",
            w.shape()
        )));
    }
    Ok(w)
}

/// Fetches a per-channel vector (stored as a (1, c, 1, 1) tensor).
pub(super) fn fetch_channel_vec<'s>(
    store: &'s WeightStore,
    name: &str,
    channels: usize,
) -> Result<&'s [f32]> {
    let t = store.get_required(name)?;
    if t.shape().numel() != channels {
        return Err(Error::Store(format!(
            "per-channel vector '{name}' has {} values, expected {channels}",
            t.shape().numel()
        )));
    }
    Ok(t.data())
}

fn execute_record(rec: &LayerRecord, args: &[&Tensor], store: &WeightStore) -> Result<Tensor> {
    match &rec.kind {
        OpKind::Input => unreachable!("inputs handled by the caller"),
        OpKind::Conv {
            params,
            weight,
            bias,
            bn,
            act,
        } => {
            let w = fetch_conv_weight(store, weight, params)?;
            let bias_vec = match bias {
                Some(name) => Some(fetch_channel_vec(store, name, params.out_channels)?),
                None => None,
            };
            let y = match bn {
                Some(names) => {
                    let bnp = BnParams {
                        gamma: fetch_channel_vec(store, &names.gamma, params.out_channels)?.to_vec(),
                        beta: fetch_channel_vec(store, &names.beta, params.out_channels)?.to_vec(),
                        running_mean: fetch_channel_vec(store, &names.mean, params.out_channels)?
                            .to_vec(),
                        running_var: fetch_channel_vec(store, &names.var, params.out_channels)?
                            .to_vec(),
                        epsilon: names.epsilon,
                    };
                    let (wf, bf) = ops::batchnorm_fold(w, bias_vec, &bnp)?;
                    ops::conv2d(args[0], &wf, Some(&bf), params)?
                }
                None => ops::conv2d(args[0], w, bias_vec, params)?,
            };
            ops::activation(*act, &y)
        }
        OpKind::MaxPool { kernel, stride, padding } => {
            ops::maxpool2d(args[0], *kernel, *stride, *padding)
        }
        OpKind::AvgPool { kernel, stride, padding } => {
            ops::avgpool2d(args[0], *kernel, *stride, *padding)
        }
        OpKind::Focus => ops::focus_slice(args[0]),
        OpKind::Upsample2x => ops::upsample_nearest2x(args[0]),
        OpKind::Shuffle { groups } => ops::channel_shuffle(args[0], *groups),
        OpKind::SplitFirst => Ok(ops::channel_split(args[0])?.0),
        OpKind::SplitSecond => Ok(ops::channel_split(args[0])?.1),
        OpKind::Concat => ops::concat_channels(args),
        OpKind::Add => crate::tensor::add(args[0], args[1]),
        OpKind::Fusion { weights, epsilon } => {
            let w = fetch_channel_vec(store, weights, args.len())?;
            weighted_fusion(args, w, *epsilon)
        }
        OpKind::Activation { kind } => ops::activation(*kind, args[0]),
    }
}

/// Fast normalized fusion: out = sum(w_i * F_i) / (sum(w_i) + eps), with
/// weights clamped at zero from below.
pub fn weighted_fusion(features: &[&Tensor], w: &[f32], eps: f32) -> Result<Tensor> {
    if features.len() < 2 {
        return Err(Error::Param("fusion needs at least two features".into()));
    }
    if w.len() != features.len() {
        return Err(Error::Param(format!(
            "fusion got {} weights for {} features",
            w.len(),
            features.len()
        )));
    }
    if eps < 0.0 {
        return Err(Error::Param(format!("fusion epsilon must be >= 0, got {eps}")));
    }
    let shape = features[0].shape();
    for f in features {
        if f.shape() != shape {
            return Err(Error::Shape(format!(
                "fusion operands differ: {} vs {shape}",
                f.shape()
            )));
        }
    }
    let clamped: Vec<f32> = w.iter().map(|v| v.max(0.0)).collect();
    let denom = clamped.iter().sum::<f32>() + eps;
    let mut out = Tensor::zeros(shape)?;
    let data = out.data_mut();
    for (f, &wi) in features.iter().zip(&clamped) {
        for (d, &v) in data.iter_mut().zip(f.data()) {
            *d += wi * v;
        }
    }
    let inv = 1.0 / denom;
    for d in data.iter_mut() {
        *d *= inv;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::weights::WeightStore;
    use crate::oracle;
    use crate::tensor::Prng;

    #[test]
    fn graph_rejects_duplicate_names_and_unknown_inputs() {
        let mut g = Graph::new();
        let i = g.add_input("in", Shape::new(1, 2, 4, 4)).unwrap();
        assert!(g.add_input("in", Shape::new(1, 2, 4, 4)).is_err());
        assert!(g
            .add("bad", OpKind::Shuffle { groups: 1 }, &[i + 7])
            .is_err());
    }

    #[test]
    fn executor_matches_direct_composition() {
        let mut prng = Prng::new(17);
        let x = oracle::random_tensor(&mut prng, (1, 4, 8, 8), -1.0, 1.0).unwrap();
        let w = oracle::random_tensor(&mut prng, (6, 4, 3, 3), -0.5, 0.5).unwrap();
        let params = ConvParams::new(4, 6, (3, 3), (2, 2), (1, 1), 1);

        let mut store = WeightStore::new();
        store.insert("conv.weight", w.clone()).unwrap();

        let mut g = Graph::new();
        let i = g.add_input("in", x.shape()).unwrap();
        let c = g
            .add(
                "conv",
                OpKind::Conv {
                    params,
                    weight: "conv.weight".into(),
                    bias: None,
                    bn: None,
                    act: Act::Relu,
                },
                &[i],
            )
            .unwrap();
        let m = g
            .add(
                "pool",
                OpKind::MaxPool {
                    kernel: (2, 2),
                    stride: (2, 2),
                    padding: (0, 0),
                },
                &[c],
            )
            .unwrap();
        let out = g.run(&store, &[&x], &[m]).unwrap().remove(0);

        let direct = ops::maxpool2d(
            &ops::activation(Act::Relu, &ops::conv2d(&x, &w, None, &params).unwrap()).unwrap(),
            (2, 2),
            (2, 2),
            (0, 0),
        )
        .unwrap();
        assert_eq!(out.data(), direct.data());
        assert_eq!(g.records()[m].out_shape, Shape::new(1, 6, 2, 2));
    }

    #[test]
    fn fusion_equal_weights_is_near_mean() {
        let a = Tensor::new((1, 2, 2, 2), 4.0).unwrap();
        let b = Tensor::new((1, 2, 2, 2), 8.0).unwrap();
        let out = weighted_fusion(&[&a, &b], &[1.0, 1.0], 1e-4).unwrap();
        // Mean is 6; the epsilon shrinks it by ~eps/(n*w).
        for &v in out.data() {
            assert!((v - 6.0).abs() / 6.0 < 1e-4, "value {v}");
        }
    }

    #[test]
    fn fusion_zero_weight_drops_branch() {
        let a = Tensor::new((1, 1, 1, 2), 3.0).unwrap();
        let b = Tensor::new((1, 1, 1, 2), 100.0).unwrap();
        let out = weighted_fusion(&[&a, &b], &[1.0, 0.0], 1e-4).unwrap();
        for &v in out.data() {
            assert!((v - 3.0 / (1.0 + 1e-4)).abs() < 1e-6);
        }
    }

    #[test]
    fn fusion_matches_direct_formula() {
        let mut prng = Prng::new(23);
        let f1 = oracle::random_tensor(&mut prng, (1, 3, 4, 4), -1.0, 1.0).unwrap();
        let f2 = oracle::random_tensor(&mut prng, (1, 3, 4, 4), -1.0, 1.0).unwrap();
        let f3 = oracle::random_tensor(&mut prng, (1, 3, 4, 4), -1.0, 1.0).unwrap();
        let w = [0.3f32, 1.7, 0.9];
        let eps = 1e-4f32;
        let out = weighted_fusion(&[&f1, &f2, &f3], &w, eps).unwrap();
        let denom = w.iter().sum::<f32>() + eps;
        for i in 0..out.data().len() {
            let expect =
                (w[0] * f1.data()[i] + w[1] * f2.data()[i] + w[2] * f3.data()[i]) / denom;
            assert!((out.data()[i] - expect).abs() <= 1e-6);
        }
    }

    #[test]
    fn fusion_clamps_negative_weights() {
        let a = Tensor::new((1, 1, 1, 1), 5.0).unwrap();
        let b = Tensor::new((1, 1, 1, 1), 7.0).unwrap();
        let out = weighted_fusion(&[&a, &b], &[-3.0, 1.0], 1e-4).unwrap();
        assert!((out.data()[0] - 7.0 / (1.0 + 1e-4)).abs() < 1e-6);
    }
}
