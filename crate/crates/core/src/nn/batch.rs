use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::structural(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::structural("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Stacks the rows of `self` and `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::structural("vstack width mismatch"));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix::new(self.rows + other.rows, cols, data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// Real-valued targets, one row per example.
    Regression(Matrix),
    /// Class indices in `0..n_classes`.
    Classes { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(m) => m.rows(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A set of (input, target) examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Targets) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::structural("batch must contain at least one example"));
        }
        if targets.len() != inputs.rows() {
            return Err(Error::structural(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        match &targets {
            Targets::Classes { labels, n_classes } => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= *n_classes) {
                    return Err(Error::structural(format!(
                        "class index {bad} out of range for {n_classes} classes"
                    )));
                }
            }
            Targets::Regression(t) => {
                if t.rows() != inputs.rows() {
                    return Err(Error::structural("target rows differ from input rows"));
                }
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn classification(inputs: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::new(inputs, Targets::Classes { labels, n_classes })
    }

    pub fn regression(inputs: Matrix, targets: Matrix) -> Result<Self> {
        Self::new(inputs, Targets::Regression(targets))
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Examples `idx` of this batch, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        let inputs = self.inputs.select_rows(idx);
        let targets = match &self.targets {
            Targets::Regression(t) => Targets::Regression(t.select_rows(idx)),
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        };
        Batch::new(inputs, targets)
    }

    /// Union of two batches (rows of `self` first).
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        let inputs = self.inputs.vstack(&other.inputs)?;
        let targets = match (&self.targets, &other.targets) {
            (Targets::Regression(a), Targets::Regression(b)) => Targets::Regression(a.vstack(b)?),
            (
                Targets::Classes { labels: a, n_classes: na },
                Targets::Classes { labels: b, n_classes: nb },
            ) if na == nb => {
                let mut labels = a.clone();
                labels.extend_from_slice(b);
                Targets::Classes {
                    labels,
                    n_classes: *na,
                }
            }
            _ => return Err(Error::structural("cannot concatenate batches of different target kinds")),
        };
        Batch::new(inputs, targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_batch_rejected() {
        let err = Batch::classification(Matrix::zeros(0, 3), vec![], 2);
        assert!(err.is_err());
    }

    #[test]
    fn label_range_checked() {
        let err = Batch::classification(Matrix::zeros(2, 3), vec![0, 2], 2);
        assert!(err.is_err());
    }

    #[test]
    fn concat_keeps_order() {
        let a = Batch::classification(Matrix::new(1, 1, vec![1.0]).unwrap(), vec![0], 2).unwrap();
        let b = Batch::classification(Matrix::new(1, 1, vec![2.0]).unwrap(), vec![1], 2).unwrap();
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.inputs.data(), &[1.0, 2.0]);
        assert_eq!(ab.targets, Targets::Classes { labels: vec![0, 1], n_classes: 2 });
    }
}
