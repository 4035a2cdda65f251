//! Row-major multichannel time series.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

/// `len × dim` samples stored row-major, one row per time index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Self {
            len,
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_vec(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 && !data.is_empty() {
            return arg("zero-dimensional signal cannot hold samples");
        }
        if dim > 0 && !data.len().is_multiple_of(dim) {
            return arg(format!(
                "signal buffer of {} values is not a multiple of dim {dim}",
                data.len()
            ));
        }
        let len = data.len().checked_div(dim).unwrap_or(0);
        Ok(Self { len, dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (t, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return arg(format!("row {t} has {} entries, expected {dim}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            len: rows.len(),
            dim,
            data,
        })
    }

    /// Single channel signal.
    pub fn from_scalar(values: &[f64]) -> Self {
        Self {
            len: values.len(),
            dim: 1,
            data: values.to_vec(),
        }
    }

    /// A zero-dimensional signal still has a length; used for `n_p = 0`.
    pub fn empty_channels(len: usize) -> Self {
        Self::zeros(len, 0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Values of one channel over time.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.row(t)[c]).collect()
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Signal {
        Signal {
            len: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn scaled(&self, s: f64) -> Signal {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        if self.dim != other.dim || self.len != other.len {
            return arg("signal shapes differ");
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        self.add(&other.scaled(-1.0))
    }

    /// Per-channel sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.dim];
        for t in 0..self.len() {
            for (acc, v) in m.iter_mut().zip(self.row(t)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-channel sample variance (divisor `len`).
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let n = self.len().max(1) as f64;
        let mut var = vec![0.0; self.dim];
        for t in 0..self.len() {
            for ((acc, v), m) in var.iter_mut().zip(self.row(t)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        var
    }
}
