//! Dense row-major node tables.
//!
//! Rows follow the global node order: users `0..M`, then items `M..M+N`.
//! For quaternion models each row of width `4d` is laid out as
//! `[r | i | j | k]`, i.e. the four blocks of one quaternion vector stored
//! back to back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quaternion::{dot, QuaternionVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    rows: usize,
    width: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, width: usize) -> Self {
        Self {
            rows,
            width,
            data: vec![0.0; rows * width],
        }
    }

    pub fn from_vec(rows: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * width {
            return Err(Error::Dimension(format!(
                "table of {rows}×{width} needs {} values, got {}",
                rows * width,
                data.len()
            )));
        }
        Ok(Self { rows, width, data })
    }

    pub fn from_quaternion_rows(rows: &[QuaternionVector]) -> Result<Self> {
        let width = rows.first().map_or(0, QuaternionVector::real_dim);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.real_dim() != width {
                return Err(Error::Dimension("quaternion rows of unequal dimension".into()));
            }
            data.extend(row.to_concat());
        }
        Ok(Self { rows: rows.len(), width, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.width..(idx + 1) * self.width]
    }

    pub fn row_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.width..(idx + 1) * self.width]
    }

    pub fn quaternion_row(&self, idx: usize) -> Result<QuaternionVector> {
        QuaternionVector::from_concat(self.row(idx))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_chunks(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.width.max(1))
    }

    pub fn row_dot(&self, a: usize, b: usize) -> f64 {
        dot(self.row(a), self.row(b))
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Table, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}
