//! Dense row-major matrices, gradient updates and model shapes.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `vᵀ · self`: the dot product of `v` with every column.
    pub fn column_dots(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &w) in self.data.chunks_exact(self.cols).zip(v) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        out
    }
}

/// Stable identifier of a model architecture: a hash of its matrix dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShapeId(pub u64);

impl fmt::Display for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub name: String,
    pub dims: Vec<(usize, usize)>,
}

impl ModelShape {
    pub fn new(name: impl Into<String>, dims: Vec<(usize, usize)>) -> Self {
        ModelShape {
            name: name.into(),
            dims,
        }
    }

    /// One-hidden-layer perceptron laid out fan-in x fan-out, biases as columns.
    pub fn mlp(input: usize, hidden: usize, classes: usize) -> Self {
        ModelShape::new(
            format!("mlp-{input}-{hidden}-{classes}"),
            vec![(input, hidden), (hidden, 1), (hidden, classes), (classes, 1)],
        )
    }

    /// Two 3x3 convolutions, 2x2 pooling and two dense layers on 28x28 inputs,
    /// 206,922 parameters. Kernels use the im2col layout (fan-in rows).
    pub fn cnn_206922() -> Self {
        ModelShape::new(
            "cnn-206922",
            vec![
                (9, 60),
                (60, 1),
                (540, 40),
                (40, 1),
                (5760, 32),
                (32, 1),
                (32, 10),
                (10, 1),
            ],
        )
    }

    pub fn id(&self) -> ShapeId {
        // FNV-1a over the little-endian dims.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.dims.len() as u64);
        for &(r, c) in &self.dims {
            eat(r as u64);
            eat(c as u64);
        }
        ShapeId(h)
    }

    pub fn num_params(&self) -> usize {
        self.dims.iter().map(|(r, c)| r * c).sum()
    }

    pub fn total_cols(&self) -> usize {
        self.dims.iter().map(|&(_, c)| c).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ShapeRegistry {
    shapes: BTreeMap<ShapeId, ModelShape>,
}

impl ShapeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the default perceptron and the 206,922-parameter CNN.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register(ModelShape::mlp(128, 64, 10));
        reg.register(ModelShape::cnn_206922());
        reg
    }

    pub fn register(&mut self, shape: ModelShape) -> ShapeId {
        let id = shape.id();
        self.shapes.insert(id, shape);
        id
    }

    pub fn get(&self, id: ShapeId) -> Result<&ModelShape> {
        self.shapes
            .get(&id)
            .ok_or_else(|| Error::UnknownShape(id.to_string()))
    }

    pub fn by_name(&self, name: &str) -> Option<&ModelShape> {
        self.shapes.values().find(|s| s.name == name)
    }
}

/// An ordered list of gradient matrices produced by one model architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate {
    matrices: Vec<Matrix>,
    shape_id: ShapeId,
}

impl GradientUpdate {
    pub fn new(shape: &ModelShape, matrices: Vec<Matrix>) -> Result<Self> {
        if matrices.len() != shape.dims.len()
            || matrices.iter().zip(&shape.dims).any(|(m, &d)| m.dims() != d)
        {
            return Err(Error::ShapeMismatch(format!(
                "matrices do not match shape {}",
                shape.name
            )));
        }
        Ok(GradientUpdate {
            matrices,
            shape_id: shape.id(),
        })
    }

    pub fn zeros(shape: &ModelShape) -> Self {
        GradientUpdate {
            matrices: shape.dims.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            shape_id: shape.id(),
        }
    }

    /// Builds an update of `shape` from a flat parameter vector, matrix by matrix.
    pub fn from_flat(shape: &ModelShape, flat: &[f64]) -> Result<Self> {
        if flat.len() != shape.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} params for shape {}, got {}",
                shape.num_params(),
                shape.name,
                flat.len()
            )));
        }
        let mut off = 0;
        let mut matrices = Vec::with_capacity(shape.dims.len());
        for &(r, c) in &shape.dims {
            matrices.push(Matrix::from_vec(r, c, flat[off..off + r * c].to_vec())?);
            off += r * c;
        }
        Ok(GradientUpdate {
            matrices,
            shape_id: shape.id(),
        })
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn matrices_mut(&mut self) -> &mut [Matrix] {
        &mut self.matrices
    }

    pub fn shape_id(&self) -> ShapeId {
        self.shape_id
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.matrices.iter().map(Matrix::dims).collect()
    }

    pub fn num_params(&self) -> usize {
        self.matrices.iter().map(|m| m.data.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.matrices.iter().flat_map(|m| m.data.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.matrices.iter_mut().flat_map(|m| m.data.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |a, x| a.max(x.abs()))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape_id != other.shape_id || self.dims() != other.dims() {
            return Err(Error::ShapeMismatch("gradient updates differ in shape".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values_mut().for_each(|x| *x *= c);
        out
    }

    /// `self += c * other`
    pub fn add_scaled(&mut self, other: &Self, c: f64) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn euclidean(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values()
            .zip(other.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Size-weighted mean of several updates of one shape.
    pub fn weighted_mean(parts: &[(&GradientUpdate, f64)]) -> Result<Self> {
        let (first, _) = parts.first().ok_or(Error::EmptyCandidates)?;
        let total: f64 = parts.iter().map(|(_, w)| w).sum();
        let mut out = first.scaled(0.0);
        for (g, w) in parts {
            out.add_scaled(g, w / total)?;
        }
        Ok(out)
    }
}
