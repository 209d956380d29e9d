//! Dense 4-D `f32` tensors in NCHW layout plus the deterministic PRNG used
//! to build demo weights.
//!
//! Layout contract: element `(n, c, y, x)` lives at flat index
//! `((n * C + c) * H + y) * W + x`, i.e. `w` is the fastest axis, then `h`,
//! then `c`, then `n`.

use crate::error::{Error, Result};

/// Extents of a 4-D tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Total element count, or an error when the product overflows `usize`.
    pub fn checked_numel(&self) -> Result<usize> {
        self.n
            .checked_mul(self.c)
            .and_then(|p| p.checked_mul(self.h))
            .and_then(|p| p.checked_mul(self.w))
            .ok_or_else(|| Error::Param(format!("extent product overflows: {self}")))
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from(t: (usize, usize, usize, usize)) -> Self {
        Shape::new(t.0, t.1, t.2, t.3)
    }
}

/// Dense 4-D feature map, 32-bit floats, row-major NCHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn new(shape: impl Into<Shape>, fill: f32) -> Result<Self> {
        let shape = shape.into();
        let numel = shape.checked_numel()?;
        Ok(Tensor {
            shape,
            data: vec![fill; numel],
        })
    }

    /// Wraps an existing buffer; its length must match the shape.
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let numel = shape.checked_numel()?;
        if data.len() != numel {
            return Err(Error::Shape(format!(
                "shape {shape} implies {numel} elements, buffer holds {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Tensor::new(shape, 0.0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn flat_index(&self, n: usize, c: usize, y: usize, x: usize) -> Result<usize> {
        let s = self.shape;
        if n >= s.n || c >= s.c || y >= s.h || x >= s.w {
            return Err(Error::Index(format!(
                "({n}, {c}, {y}, {x}) outside shape {s}"
            )));
        }
        Ok(((n * s.c + c) * s.h + y) * s.w + x)
    }

    /// Checked element read at `(n, c, y, x)`.
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> Result<f32> {
        Ok(self.data[self.flat_index(n, c, y, x)?])
    }

    /// Checked element write at `(n, c, y, x)`.
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f32) -> Result<()> {
        let idx = self.flat_index(n, c, y, x)?;
        self.data[idx] = value;
        Ok(())
    }

    /// Unchecked flat offset of `(n, c, y, x)`; callers must have validated
    /// the indices against the shape.
    #[inline(always)]
    pub(crate) fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    /// The contiguous `(h, w)` plane of channel `c` in batch item `n`.
    #[inline]
    pub(crate) fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape.h * self.shape.w;
        let start = (n * self.shape.c + c) * hw;
        &self.data[start..start + hw]
    }
}

/// Elementwise binary operation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

/// Per-element `add` or `mul` of two tensors with identical shapes.
pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "elementwise operands differ: {} vs {}",
            a.shape, b.shape
        )));
    }
    let data = match op {
        BinaryOp::Add => a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
        BinaryOp::Mul => a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    };
    Ok(Tensor {
        shape: a.shape,
        data,
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Add, a, b)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Mul, a, b)
}

/// Deterministic 64-bit generator (SplitMix64).
///
/// State advances by the golden-ratio increment `0x9E3779B97F4A7C15`; each
/// step's output is the xorshift-multiply mix with constants
/// `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`. Same seed, same stream,
/// on every platform.
#[derive(Debug, Clone)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One standard-normal draw pair via Box-Muller.
    fn normal_pair(&mut self) -> (f64, f64) {
        // 1 - uniform() lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }
}

/// Tensor of deterministic pseudo-normal values drawn from `prng`.
///
/// Elements are produced in flat-index order, two per Box-Muller pair; a
/// trailing odd element consumes a full pair and drops the second half.
pub fn seeded_normal(prng: &mut Prng, shape: impl Into<Shape>, mean: f32, std: f32) -> Result<Tensor> {
    if std < 0.0 {
        return Err(Error::Param(format!("negative std {std}")));
    }
    let shape = shape.into();
    let numel = shape.checked_numel()?;
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let (z0, z1) = prng.normal_pair();
        data.push(mean + std * z0 as f32);
        if data.len() < numel {
            data.push(mean + std * z1 as f32);
        }
    }
    Ok(Tensor { shape, data })
}
