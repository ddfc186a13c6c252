//! Dense linear algebra on `f64`, a reverse-mode tape over vector-valued
//! nodes, and a central-difference gradient checker.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, BlockReport, GradCheckOptions, GradCheckReport};
pub(crate) use tape::log_sum_exp;
pub use tape::{Gradients, NodeId, Param, ParamId, ParamStore, RateGroup, Tape};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Squared-norm threshold below which a projection target is treated as zero.
pub const DEFAULT_SINGULAR_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("{op}: shape mismatch, {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    OutOfRange { op: &'static str, index: usize, len: usize },
    #[error("backward: loss node has length {0}, expected a scalar")]
    NonScalarLoss(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("grad_check: closure is not deterministic ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },
    #[error("grad_check: step must be positive, got {0}")]
    BadStep(f64),
    #[error("matrix {rows}x{cols} needs {expected} values, got {got}")]
    BadMatrix {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, MathError>;

fn mismatch<T>(op: &'static str, left: impl ToString, right: impl ToString) -> Result<T> {
    Err(MathError::ShapeMismatch {
        op,
        left: left.to_string(),
        right: right.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(pub Vec<f64>);

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.0, &self.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_len("dot", other)?;
        Ok(dot_slices(&self.0, &other.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len("add", other)?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len("sub", other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_len("mul", other)?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn relu(&self) -> Self {
        Self(self.0.iter().map(|&v| relu(v)).collect())
    }

    pub fn sigmoid(&self) -> Self {
        Self(self.0.iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn concat(parts: &[&DenseVector]) -> Self {
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for part in parts {
            out.extend_from_slice(&part.0);
        }
        Self(out)
    }

    fn check_len(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return mismatch(op, format!("[{}]", self.len()), format!("[{}]", other.len()));
        }
        Ok(())
    }

    fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(MathError::BadMatrix {
                rows,
                cols,
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> Result<&[f64]> {
        if r >= self.rows {
            return Err(MathError::OutOfRange {
                op: "row",
                index: r,
                len: self.rows,
            });
        }
        Ok(&self.values[r * self.cols..(r + 1) * self.cols])
    }

    pub fn shape(&self) -> String {
        format!("[{}x{}]", self.rows, self.cols)
    }

    /// `W x + b`.
    pub fn affine(&self, x: &DenseVector, bias: &DenseVector) -> Result<DenseVector> {
        if x.len() != self.cols {
            return mismatch("affine", self.shape(), format!("[{}]", x.len()));
        }
        if bias.len() != self.rows {
            return mismatch("affine", self.shape(), format!("bias [{}]", bias.len()));
        }
        let mut out = bias.0.clone();
        affine_into(&self.values, self.cols, &x.0, &mut out);
        Ok(DenseVector(out))
    }
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x` for row-major `W` with `cols` columns.
pub(crate) fn affine_into(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot_slices(row, x);
    }
}

/// Split `h` into the component parallel to `t` and the orthogonal residual.
///
/// When `t·t` is below `threshold` the parallel part is the zero vector and
/// the orthogonal part is `h` itself.
pub fn project_decompose_with(t: &DenseVector, h: &DenseVector, threshold: f64) -> Result<(DenseVector, DenseVector)> {
    if t.len() != h.len() {
        return mismatch(
            "project_decompose",
            format!("t [{}]", t.len()),
            format!("h [{}]", h.len()),
        );
    }
    let parallel = parallel_component(&t.0, &h.0, threshold);
    let orthogonal = h.0.iter().zip(&parallel).map(|(a, b)| a - b).collect();
    Ok((DenseVector(parallel), DenseVector(orthogonal)))
}

pub fn project_decompose(t: &DenseVector, h: &DenseVector) -> Result<(DenseVector, DenseVector)> {
    project_decompose_with(t, h, DEFAULT_SINGULAR_THRESHOLD)
}

pub(crate) fn parallel_component(t: &[f64], h: &[f64], threshold: f64) -> Vec<f64> {
    let tt = dot_slices(t, t);
    if tt < threshold {
        return vec![0.0; t.len()];
    }
    let coef = dot_slices(h, t) / tt;
    t.iter().map(|v| coef * v).collect()
}
