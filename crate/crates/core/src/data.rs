//! Regression data: a design matrix whose first column is the intercept and a
//! response vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Builds a dataset from a full design matrix. Column 0 must be identically 1.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Dimension("design matrix has no columns".into()));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Domain("first design column must be identically 1".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("data contain non-finite values".into()));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from predictor columns (without intercept); the
    /// intercept column is prepended.
    pub fn from_predictors(predictors: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        for (j, col) in predictors.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "predictor {} has {} entries, response has {n}",
                    j + 1,
                    col.len()
                )));
            }
        }
        let p = predictors.len() + 1;
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { predictors[j - 1][i] });
        Self::new(x, DVector::from_vec(y))
    }

    /// Builds a dataset from rows of predictors (each row excludes the intercept).
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if rows.len() != n {
            return Err(Error::Dimension(format!("{} rows but {n} responses", rows.len())));
        }
        let q = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::Dimension("ragged predictor rows".into()));
        }
        let x = DMatrix::from_fn(n, q + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        Self::new(x, DVector::from_vec(y))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// x_iᵀβ for observation i.
    pub fn linear_predictor(&self, i: usize, beta: &[f64]) -> f64 {
        beta.iter().enumerate().map(|(j, b)| self.x[(i, j)] * b).sum()
    }

    pub fn fitted(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (j, b) in beta.iter().enumerate() {
            for (o, xv) in out.iter_mut().zip(self.x.column(j).iter()) {
                *o += xv * b;
            }
        }
        out
    }

    /// y − Xβ.
    pub fn residuals(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.fitted(beta);
        for (ri, yi) in r.iter_mut().zip(self.y.iter()) {
            *ri = yi - *ri;
        }
        r
    }

    pub fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::Dimension(format!(
                "beta has length {} but design has {} columns",
                beta.len(),
                self.p()
            )));
        }
        Ok(())
    }

    /// Rows at `indices`, in that order; repeats allowed.
    pub fn select(&self, indices: &[usize]) -> Self {
        let x = DMatrix::from_fn(indices.len(), self.p(), |i, j| self.x[(indices[i], j)]);
        let y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.y[i]));
        Self { x, y }
    }

    /// Stacks `other` below `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.p() != self.p() {
            return Err(Error::Dimension("datasets have different widths".into()));
        }
        let n = self.n() + other.n();
        let x = DMatrix::from_fn(
            n,
            self.p(),
            |i, j| {
                if i < self.n() {
                    self.x[(i, j)]
                } else {
                    other.x[(i - self.n(), j)]
                }
            },
        );
        let y = DVector::from_iterator(n, self.y.iter().chain(other.y.iter()).copied());
        Ok(Self { x, y })
    }

    /// Copy with y replaced by y + X·shift.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        self.check_beta(shift)?;
        let f = self.fitted(shift);
        let y = DVector::from_iterator(self.n(), self.y.iter().zip(f).map(|(y, s)| y + s));
        Ok(Self { x: self.x.clone(), y })
    }
}
