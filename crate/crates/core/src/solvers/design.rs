use crate::error::{Error, Result};

/// Dense, fully observed regressor matrix (row-major) with its column
/// centering and scaling record.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    col_centers: Vec<f64>,
    col_scales: Vec<f64>,
}

/// Columns whose spread is below this share of their magnitude are treated as
/// constant and excluded from fitting.
const CONSTANT_TOL: f64 = 1e-12;

impl DesignMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "design data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        let weights = vec![1.0; rows];
        let (col_centers, col_scales) = weighted_standardization(&data, rows, cols, &weights);
        Ok(Self {
            rows,
            cols,
            data,
            col_centers,
            col_scales,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged design rows"));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    /// Builds from column vectors of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("design columns differ in length"));
        }
        let cols = columns.len();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend(columns.iter().map(|c| c[i]));
        }
        Self::from_row_major(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn col_centers(&self) -> &[f64] {
        &self.col_centers
    }

    /// Population standard deviations; zero marks a constant column.
    pub fn col_scales(&self) -> &[f64] {
        &self.col_scales
    }

    /// Indices of columns excluded from fitting because they are constant.
    pub fn dropped_columns(&self) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.col_scales[j] == 0.0).collect()
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Weighted column means and population SDs; near-constant columns get scale 0.
pub(crate) fn weighted_standardization(
    data: &[f64],
    rows: usize,
    cols: usize,
    weights: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = weights.iter().sum();
    let mut centers = vec![0.0; cols];
    let mut scales = vec![0.0; cols];
    if rows == 0 || total <= 0.0 {
        return (centers, scales);
    }
    for i in 0..rows {
        let w = weights[i] / total;
        for j in 0..cols {
            centers[j] += w * data[i * cols + j];
        }
    }
    let mut magnitude = vec![0.0f64; cols];
    for i in 0..rows {
        let w = weights[i] / total;
        for j in 0..cols {
            let d = data[i * cols + j] - centers[j];
            scales[j] += w * d * d;
            if weights[i] > 0.0 {
                magnitude[j] = magnitude[j].max(data[i * cols + j].abs());
            }
        }
    }
    for j in 0..cols {
        let sd = scales[j].sqrt();
        scales[j] = if sd > CONSTANT_TOL * magnitude[j].max(1e-300) { sd } else { 0.0 };
    }
    (centers, scales)
}
