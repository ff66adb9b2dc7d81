//! Dense row-major matrices of per-feature statistics.
//!
//! Row `i` holds the `K` values observed for feature `i`, one per experiment.

use crate::error::{Error, Result};

/// An `m x K` matrix of p-values, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl PValueMatrix {
    /// Builds a matrix from row-major data, validating shape and range.
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        check_shape(data.len(), rows, cols)?;
        for (pos, &p) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!(
                    "p-value {p} at row {}, column {} is outside [0, 1]",
                    pos / cols,
                    pos % cols
                )));
            }
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (data, m, k) = flatten(rows)?;
        Self::new(data, m, k)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of experiments `K`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// An `m x K` matrix of finite z-values.
#[derive(Debug, Clone, PartialEq)]
pub struct ZMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl ZMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        check_shape(data.len(), rows, cols)?;
        if let Some(pos) = data.iter().position(|z| !z.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite z-value at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let (data, m, k) = flatten(rows)?;
        Self::new(data, m, k)
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

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A set of `K`-dimensional points, each tagged with the feature index it
/// came from. Position `node` in the set is the node id used by the poset
/// and kernel machinery.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    ids: Vec<usize>,
    coords: Vec<f64>,
    dim: usize,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            coords: Vec::new(),
            dim,
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            ids: Vec::with_capacity(n),
            coords: Vec::with_capacity(n * dim),
            dim,
        }
    }

    /// Builds a set from `(feature index, point)` pairs.
    pub fn from_pairs(pairs: &[(usize, Vec<f64>)]) -> Result<Self> {
        let dim = pairs.first().map_or(0, |(_, p)| p.len());
        let mut set = Self::with_capacity(dim, pairs.len());
        for (id, p) in pairs {
            set.push(*id, p)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, id: usize, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::Domain(format!(
                "point has dimension {}, expected {}",
                point.len(),
                self.dim
            )));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("point coordinates must be finite".into()));
        }
        self.ids.push(id);
        self.coords.extend_from_slice(point);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Feature index of `node`.
    pub fn id(&self, node: usize) -> usize {
        self.ids[node]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn point(&self, node: usize) -> &[f64] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords
            .chunks_exact(self.dim.max(1))
            .take(self.ids.len())
    }
}

fn check_shape(len: usize, rows: usize, cols: usize) -> Result<()> {
    if cols == 0 {
        return Err(Error::Domain("matrix must have at least one column".into()));
    }
    if len != rows * cols {
        return Err(Error::Domain(format!(
            "data length {len} does not match shape {rows} x {cols}"
        )));
    }
    Ok(())
}

fn flatten(rows: &[Vec<f64>]) -> Result<(Vec<f64>, usize, usize)> {
    let k = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * k);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != k {
            return Err(Error::Domain(format!(
                "row {i} has {} columns, expected {k}",
                r.len()
            )));
        }
        data.extend_from_slice(r);
    }
    Ok((data, rows.len(), k))
}
