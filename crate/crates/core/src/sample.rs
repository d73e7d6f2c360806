//! Point clouds stored row-wise.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x d` matrix of finite points, one point per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct SampleMatrix(Array2<f64>);

impl SampleMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "sample matrix must be non-empty, got {n}x{d}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(SampleMatrix(data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows have differing lengths"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(data)
    }

    /// Column vector of 1-D points.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        let data = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(data)
    }

    pub fn count(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn rows(&self) -> ndarray::iter::Lanes<'_, f64, ndarray::Ix1> {
        self.0.rows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> SampleMatrix {
        SampleMatrix(self.0.select(Axis(0), indices))
    }

    pub(crate) fn ensure_same_dim(&self, other: &SampleMatrix, what: &str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "{what}: dimension mismatch ({} vs {})",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Array2<f64>> for SampleMatrix {
    type Error = Error;

    fn try_from(data: Array2<f64>) -> Result<Self> {
        SampleMatrix::new(data)
    }
}

impl From<SampleMatrix> for Array2<f64> {
    fn from(s: SampleMatrix) -> Self {
        s.0
    }
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
