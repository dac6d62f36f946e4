//! Dense row-major matrices and vectors with the handful of kernels the
//! decoder needs. Vectors are treated as row vectors, so a layer computes
//! `x · M` with `M` of shape `in × out`.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::nn::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform entries in `[-1/sqrt(rows), 1/sqrt(rows)]`; `rows` is the
    /// fan-in under the row-vector convention.
    pub fn fan_in_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// `out += x · m`
pub fn vec_mat_acc(x: &[f64], m: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(x.len(), m.rows);
    debug_assert_eq!(out.len(), m.cols);
    for (i, &xi) in x.iter().enumerate() {
        let row = m.row(i);
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
}

/// `out += m · d`, the transpose product used to push gradients back
/// through `x · m`.
pub fn mat_vec_acc(m: &Matrix, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(d.len(), m.cols);
    debug_assert_eq!(out.len(), m.rows);
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(m.row(i), d);
    }
}

/// `g += xᵀ d`
pub fn outer_acc(g: &mut Matrix, x: &[f64], d: &[f64]) {
    debug_assert_eq!(x.len(), g.rows);
    debug_assert_eq!(d.len(), g.cols);
    for (i, &xi) in x.iter().enumerate() {
        for (gij, &dj) in g.row_mut(i).iter_mut().zip(d) {
            *gij += xi * dj;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `x·U + h·W + b`, the pre-activation shape shared by all three GRU gates.
pub fn affine(x: &[f64], u: &Matrix, h: &[f64], w: &Matrix, b: &[f64]) -> Result<Vector> {
    if x.len() != u.rows {
        return Err(Error::shape(
            "affine",
            format!("x has dim {} but U has {} rows", x.len(), u.rows),
        ));
    }
    if h.len() != w.rows {
        return Err(Error::shape(
            "affine",
            format!("h has dim {} but W has {} rows", h.len(), w.rows),
        ));
    }
    if u.cols != w.cols || u.cols != b.len() {
        return Err(Error::shape(
            "affine",
            format!(
                "U has {} cols, W has {} cols, b has dim {}",
                u.cols,
                w.cols,
                b.len()
            ),
        ));
    }
    let mut out = Vector::from(b);
    vec_mat_acc(x, u, &mut out);
    vec_mat_acc(h, w, &mut out);
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter()
        .map(|&x| sigmoid_scalar(x))
        .collect::<Vec<_>>()
        .into()
}

pub fn tanh(v: &[f64]) -> Vector {
    v.iter().map(|x| x.tanh()).collect::<Vec<_>>().into()
}

pub fn log_softmax(logits: &[f64]) -> Vector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    logits.iter().map(|&l| l - log_z).collect::<Vec<_>>().into()
}
