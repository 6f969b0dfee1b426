use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Row-major matrix of `f64` used for every vector and batch carrier.
///
/// Constructors reject non-finite entries, so a `DenseMatrix` obtained
/// through the public API never holds NaN or infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(Array2<f64>);

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix(Array2::zeros((rows, cols)))
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::config(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::config("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_array(arr: Array2<f64>) -> Result<Self> {
        let m = DenseMatrix(arr.as_standard_layout().into_owned());
        m.ensure_finite("matrix")?;
        Ok(m)
    }

    /// Wraps an array produced by internal arithmetic; finiteness is the
    /// caller's responsibility.
    pub(crate) fn from_array_unchecked(arr: Array2<f64>) -> Self {
        DenseMatrix(arr)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[[r, c]]
    }

    pub fn row(&self, r: usize) -> ArrayView1<'_, f64> {
        self.0.row(r)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[DenseMatrix]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.0.view()).collect();
        let arr = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::config(e.to_string()))?;
        Ok(DenseMatrix(arr))
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        DenseMatrix(self.0.select(Axis(0), idx))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Returns a numerical error naming `what` if any entry is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if let Some((pos, v)) = self.0.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "{what} has non-finite entry {v} at {pos:?}"
            )));
        }
        Ok(())
    }
}

impl From<DenseMatrix> for Array2<f64> {
    fn from(m: DenseMatrix) -> Self {
        m.0
    }
}
