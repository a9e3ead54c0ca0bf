//! Dense linear-algebra primitives the rest of the crate builds on:
//! row-normalized embedding matrices, cosine score matrices, an
//! SVD-based pseudo-inverse, and spherical k-means.

mod kmeans;
mod svd;

pub use kmeans::{kmeans, kmeans_with_trace, KmeansTrace};
pub use svd::{moore_penrose_residual, pinv, svd, Svd};

use crate::error::{Error, Result};
use crate::exec::{fill_indexed, Exec};
use ndarray::Array2;

/// Row norms below this are considered degenerate everywhere.
pub const NORM_EPS: f64 = 1e-12;

/// Slack allowed on cosine values before a score matrix is rejected.
pub const SCORE_SLACK: f64 = 1e-6;

/// Dense row-major matrix of embedding vectors, one per row. Rows may
/// carry stable identifiers so subsets keep their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
    ids: Option<Vec<u64>>,
    unit_normalized: bool,
}

impl EmbeddingMatrix {
    /// Wraps a dense matrix, rejecting non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("embedding data".into()));
        }
        let data = ensure_standard(data);
        Ok(Self { data, ids: None, unit_normalized: false })
    }

    /// Like [`EmbeddingMatrix::new`] but with one stable id per row.
    pub fn with_ids(data: Array2<f64>, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != data.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} rows",
                ids.len(),
                data.nrows()
            )));
        }
        let mut m = Self::new(data)?;
        m.ids = Some(ids);
        Ok(m)
    }

    /// Builds from a flat row-major buffer.
    pub fn from_flat(rows: usize, cols: usize, flat: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Embedding dimension (number of columns).
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn ids(&self) -> Option<&[u64]> {
        self.ids.as_deref()
    }

    /// Stable id of a row, defaulting to its position.
    pub fn id_of(&self, row: usize) -> u64 {
        match &self.ids {
            Some(ids) => ids[row],
            None => row as u64,
        }
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    /// Row as a contiguous slice. Backing storage is always standard
    /// layout, so this never copies.
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let d = self.dim();
        let flat = self.data.as_slice().expect("standard layout");
        &flat[i * d..(i + 1) * d]
    }

    /// New matrix holding the given rows in the given order; ids follow.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut flat = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            flat.extend_from_slice(self.row_slice(i));
        }
        let data = Array2::from_shape_vec((indices.len(), d), flat).expect("shape");
        let ids = self
            .ids
            .as_ref()
            .map(|ids| indices.iter().map(|&i| ids[i]).collect());
        Self { data, ids, unit_normalized: self.unit_normalized }
    }

    /// Stacks matrices of equal dimension. Ids are kept only when every
    /// part carries them.
    pub fn concat(parts: &[&EmbeddingMatrix]) -> Result<Self> {
        let dim = match parts.first() {
            Some(p) => p.dim(),
            None => return Err(Error::EmptyInput("concat of zero matrices")),
        };
        let total: usize = parts.iter().map(|p| p.rows()).sum();
        let mut flat = Vec::with_capacity(total * dim);
        for p in parts {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "concat dims {} vs {}",
                    dim,
                    p.dim()
                )));
            }
            flat.extend_from_slice(p.data.as_slice().expect("standard layout"));
        }
        let data = Array2::from_shape_vec((total, dim), flat).expect("shape");
        let ids = if parts.iter().all(|p| p.ids.is_some()) {
            let mut ids = Vec::with_capacity(total);
            for p in parts {
                ids.extend_from_slice(p.ids.as_deref().unwrap());
            }
            Some(ids)
        } else {
            None
        };
        let unit_normalized = parts.iter().all(|p| p.unit_normalized);
        Ok(Self { data, ids, unit_normalized })
    }

    pub(crate) fn mark_unit_normalized(mut self) -> Self {
        self.unit_normalized = true;
        self
    }
}

/// Cosine similarity matrix between two embedding batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Array2<f64>,
}

impl ScoreMatrix {
    /// Validates that every entry is a finite cosine, i.e. within
    /// `[-1 - SCORE_SLACK, 1 + SCORE_SLACK]`.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for &x in values.iter() {
            if !x.is_finite() {
                return Err(Error::NonFinite("score matrix".into()));
            }
            if !(-1.0 - SCORE_SLACK..=1.0 + SCORE_SLACK).contains(&x) {
                return Err(Error::OutOfRange(format!("cosine score {x}")));
            }
        }
        let values = ensure_standard(values);
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Linear map `out_dim × in_dim` applied to row vectors as `x Wᵀ`,
/// optionally carrying its Moore–Penrose pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMap {
    matrix: Array2<f64>,
    pinv: Option<Array2<f64>>,
}

impl ProjectionMap {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if !matrix.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("projection matrix".into()));
        }
        let matrix = ensure_standard(matrix);
        Ok(Self { matrix, pinv: None })
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Mutable access for in-place parameter updates; drops any cached
    /// pseudo-inverse since it would no longer correspond.
    pub(crate) fn matrix_mut(&mut self) -> &mut Array2<f64> {
        self.pinv = None;
        &mut self.matrix
    }

    /// Cached pseudo-inverse, `in_dim × out_dim`, if it has been computed.
    pub fn cached_pinv(&self) -> Option<&Array2<f64>> {
        self.pinv.as_ref()
    }

    /// Applies the map to each row of `m`: result row i = `W · m_i`.
    pub fn project(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if m.dim() != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "projection expects dim {}, got {}",
                self.in_dim(),
                m.dim()
            )));
        }
        EmbeddingMatrix::new(m.data().dot(&self.matrix.t()))
    }

    /// Applies the cached pseudo-inverse to each row of `m`.
    pub fn project_pinv(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let p = self
            .pinv
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("pseudo-inverse not computed".into()))?;
        if m.dim() != self.out_dim() {
            return Err(Error::DimensionMismatch(format!(
                "pinv projection expects dim {}, got {}",
                self.out_dim(),
                m.dim()
            )));
        }
        EmbeddingMatrix::new(m.data().dot(&p.t()))
    }
}

/// Returns a copy of the map with its pseudo-inverse cache filled.
pub fn pseudo_inverse(p: &ProjectionMap) -> Result<ProjectionMap> {
    let inv = pinv(&p.matrix)?;
    Ok(ProjectionMap { matrix: p.matrix.clone(), pinv: Some(inv) })
}

/// Dot product with a fixed left-to-right accumulation order. All
/// score kernels funnel through this so parallel and sequential paths
/// agree bitwise.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-normalizes each row of `m`, erroring on row index of any row
/// with norm below [`NORM_EPS`].
pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let data = normalized_rows(m)?;
    let out = EmbeddingMatrix {
        data,
        ids: m.ids.clone(),
        unit_normalized: false,
    };
    Ok(out.mark_unit_normalized())
}

pub(crate) fn normalized_rows(m: &EmbeddingMatrix) -> Result<Array2<f64>> {
    let mut data = m.data.clone();
    let d = m.dim();
    let flat = data.as_slice_mut().expect("standard layout");
    for i in 0..m.rows() {
        let row = &mut flat[i * d..(i + 1) * d];
        let n = norm(row);
        if n < NORM_EPS {
            return Err(Error::DegenerateRow(i));
        }
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    Ok(data)
}

/// Cosine similarity of every row of `u` against every row of `v`,
/// using the default execution strategy.
pub fn score_matrix(u: &EmbeddingMatrix, v: &EmbeddingMatrix) -> Result<ScoreMatrix> {
    score_matrix_exec(u, v, Exec::default())
}

/// [`score_matrix`] with an explicit execution strategy. Both
/// strategies produce bitwise identical output.
pub fn score_matrix_exec(
    u: &EmbeddingMatrix,
    v: &EmbeddingMatrix,
    exec: Exec,
) -> Result<ScoreMatrix> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch(format!(
            "score_matrix dims {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let uh = normalized_rows(u)?;
    let vh = normalized_rows(v)?;
    let (b1, b2, d) = (u.rows(), v.rows(), u.dim());
    let us = uh.as_slice().expect("standard layout");
    let vs = vh.as_slice().expect("standard layout");
    let mut flat = vec![0.0f64; b1 * b2];
    fill_indexed(exec, &mut flat, |idx| {
        let i = idx / b2;
        let j = idx % b2;
        dot(&us[i * d..(i + 1) * d], &vs[j * d..(j + 1) * d])
    });
    ScoreMatrix::new(Array2::from_shape_vec((b1, b2), flat).expect("shape"))
}

/// Rebuilds into standard layout if the array arrived with any other
/// memory order, so `as_slice` row math holds crate-wide.
fn ensure_standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        let shape = (a.nrows(), a.ncols());
        Array2::from_shape_vec(shape, a.iter().copied().collect()).expect("shape")
    }
}
