//! Named weight storage and its on-disk format.
//!
//! The file layout is little-endian throughout: the 4-byte magic `SYW1`, a
//! u32 record count, then per record a u16 name length, the UTF-8 name, a
//! u8 dimension count, that many u32 extents, and the f32 payload in the
//! tensor's own flat order. Save and load round-trip byte-identically
//! because record order is preserved.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Prng, Shape, Tensor};

use super::graph::{BnNames, Graph, OpKind};

pub const WEIGHT_MAGIC: [u8; 4] = *b"SYW1";

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default)]
pub struct WeightStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl WeightStore {
    pub fn new() -> Self {
        WeightStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Store(format!("duplicate weight record '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    /// Swaps the tensor of an existing record; the replacement must keep
    /// the element count so consumers stay valid.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::Store(format!("missing weight record '{name}'")))?;
        let old = &self.entries[i].1;
        if old.shape().numel() != tensor.shape().numel() {
            return Err(Error::Store(format!(
                "replacement for '{name}' has {} values, expected {}",
                tensor.shape().numel(),
                old.shape().numel()
            )));
        }
        self.entries[i].1 = tensor;
        Ok(())
    }

    pub fn get_required(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Store(format!("missing weight record '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Serializes the store in insertion order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHT_MAGIC);
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Store("too many records for the file format".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in &self.entries {
            let name_len = u16::try_from(name.len()).map_err(|_| {
                Error::Store(format!("record name '{name}' exceeds 65535 bytes"))
            })?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let s = tensor.shape();
            out.push(4u8);
            for dim in [s.n, s.c, s.h, s.w] {
                let d = u32::try_from(dim).map_err(|_| {
                    Error::Store(format!("record '{name}' extent {dim} exceeds u32"))
                })?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a serialized store, reporting the byte offset and record name
    /// on malformed input.
    pub fn from_bytes(bytes: &[u8]) -> Result<WeightStore> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic", "header")?;
        if magic != WEIGHT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:02x?}, expected {:02x?}",
                magic, WEIGHT_MAGIC
            )));
        }
        let count = cur.read_u32("record count", "header")?;
        let mut store = WeightStore::new();
        for k in 0..count {
            let fallback = format!("record #{k}");
            let name_len = cur.read_u16("name length", &fallback)? as usize;
            let name_bytes = cur.take(name_len, "name", &fallback)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::Format(format!("{fallback}: name is not UTF-8")))?
                .to_string();
            let ndim = cur.take(1, "dimension count", &name)?[0] as usize;
            if ndim == 0 || ndim > 4 {
                return Err(Error::Format(format!(
                    "record '{name}': dimension count {ndim} outside 1..=4"
                )));
            }
            let mut dims = [1usize; 4];
            for d in 0..ndim {
                dims[4 - ndim + d] = cur.read_u32("extent", &name)? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let numel = shape
                .checked_numel()
                .map_err(|_| Error::Format(format!("record '{name}': extents overflow")))?;
            let payload = cur.take(numel * 4, "tensor data", &name)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(name, Tensor::from_vec(shape, data)?)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last record (offset {})",
                bytes.len() - cur.pos,
                cur.pos
            )));
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str, ctx: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated while reading {what} of {ctx}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u16(&mut self, what: &str, ctx: &str) -> Result<u16> {
        let b = self.take(2, what, ctx)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn read_u32(&mut self, what: &str, ctx: &str) -> Result<u32> {
        let b = self.take(4, what, ctx)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Creates every tensor a graph needs, drawing from one seeded stream in
/// record order so the result is a pure function of the seed.
///
/// Convolution weights are normal with std sqrt(2 / fan_in); biases and
/// shift vectors start at zero, scale vectors at one. Running means get
/// small normal noise so normalization folding is exercised rather than a
/// no-op, and fusion weights start equal.
pub fn init_weights(graph: &Graph, seed: u64) -> Result<WeightStore> {
    let mut prng = Prng::new(seed);
    let mut store = WeightStore::new();
    for rec in graph.records() {
        match &rec.kind {
            OpKind::Conv {
                params,
                weight,
                bias,
                bn,

                ..
            } => {
                let c = params.out_channels;
                let fan_in = (params.in_channels / params.groups) * params.kernel.0 * params.kernel.1;
                let std = (2.0 / fan_in as f64).sqrt() as f32;
                let wshape = Shape::new(c, params.in_channels / params.groups, params.kernel.0, params.kernel.1);
                store.insert(weight.clone(), crate::tensor::seeded_normal(&mut prng, wshape, 0.0, std)?)?;
                if let Some(bname) = bias {
                    store.insert(bname.clone(), Tensor::zeros((1, c, 1, 1))?)?;
                }
                if let Some(names) = bn {
                    store.insert(names.gamma.clone(), Tensor::new((1, c, 1, 1), 1.0)?)?;
                    store.insert(names.beta.clone(), Tensor::zeros((1, c, 1, 1))?)?;
                    store.insert(
                        names.mean.clone(),
                        crate::tensor::seeded_normal(&mut prng, (1, c, 1, 1), 0.0, 0.05)?,
                    )?;
                    store.insert(names.var.clone(), Tensor::new((1, c, 1, 1), 1.0)?)?;
                }
            }
            OpKind::Fusion { weights, .. } => {
                store.insert(weights.clone(), Tensor::new((1, 1, 1, rec.inputs.len()), 1.0)?)?;
            }
            _ => {}
        }
    }
    Ok(store)
}

/// Confirms a store holds every tensor a graph consumes, with the exact
/// shape or element count the consuming layer requires.
pub fn validate_store(graph: &Graph, store: &WeightStore) -> Result<()> {
    for rec in graph.records() {
        match &rec.kind {
            OpKind::Conv {
                params,
                weight,
                bias,
                bn,
                ..
            } => {
                super::graph::fetch_conv_weight(store, weight, params)?;
                if let Some(bname) = bias {
                    super::graph::fetch_channel_vec(store, bname, params.out_channels)?;
                }
                if let Some(BnNames { gamma, beta, mean, var, .. }) = bn {
                    for name in [gamma, beta, mean, var] {
                        super::graph::fetch_channel_vec(store, name, params.out_channels)?;
                    }
                }
            }
            OpKind::Fusion { weights, .. } => {
                super::graph::fetch_channel_vec(store, weights, rec.inputs.len())?;
            }
            _ => {}
        }
    }
    Ok(())
}
