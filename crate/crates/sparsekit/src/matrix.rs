//! Dense, masked, and classical sparse matrix storage, plus the sparsity
//! and energy metrics used by every other module.
//!
//! All matrices are 2-D and row-major. Higher-rank tensors are flattened
//! by the caller. Types are immutable after construction and safe to share
//! across threads.

use crate::error::{Error, Result};
use crate::nmg::GroupedNMMatrix;
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt;

// ---------------------------------------------------------------------------
// Layout tags
// ---------------------------------------------------------------------------

/// Identifies a sparsity layout, including any format parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutTag {
    Dense,
    Masked,
    Csr,
    Coo,
    GroupedNm { n: usize, m: usize, g: usize },
}

/// Layout family without format parameters. Used as part of sparsifier
/// implementation keys, where one implementation serves all parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutKind {
    Dense,
    Masked,
    Csr,
    Coo,
    GroupedNm,
}

impl LayoutTag {
    pub fn validate(&self) -> Result<()> {
        if let LayoutTag::GroupedNm { n, m, g } = *self {
            if n < 1 || n >= m {
                return Err(Error::InvalidParameter(format!(
                    "grouped n:m requires 1 <= n < m, got n={n}, m={m}"
                )));
            }
            if g < 1 {
                return Err(Error::InvalidParameter("group size g must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> LayoutKind {
        match self {
            LayoutTag::Dense => LayoutKind::Dense,
            LayoutTag::Masked => LayoutKind::Masked,
            LayoutTag::Csr => LayoutKind::Csr,
            LayoutTag::Coo => LayoutKind::Coo,
            LayoutTag::GroupedNm { .. } => LayoutKind::GroupedNm,
        }
    }
}

impl fmt::Display for LayoutTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutTag::Dense => write!(f, "dense"),
            LayoutTag::Masked => write!(f, "masked"),
            LayoutTag::Csr => write!(f, "csr"),
            LayoutTag::Coo => write!(f, "coo"),
            LayoutTag::GroupedNm { n, m, g } => write!(f, "nmg({n}:{m}:{g})"),
        }
    }
}

/// Axis selector for formats that treat the two axes differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Cols,
}

impl Axis {
    pub fn to_byte(self) -> u8 {
        match self {
            Axis::Rows => 0,
            Axis::Cols => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Axis> {
        match b {
            0 => Some(Axis::Rows),
            1 => Some(Axis::Cols),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix; the reference representation every other layout
/// decodes to.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Structure("matrix must have rows >= 1, cols >= 1".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::Structure(format!(
                "value length {} does not match {rows}x{cols}",
                values.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix::new(rows, cols, vec![T::zero(); rows * cols]).expect("nonempty shape")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        DenseMatrix::new(rows, cols, values).expect("nonempty shape")
    }

    /// Standard-normal matrix from a fixed seed; byte-stable across runs.
    pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(x)
        })
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn transpose(&self) -> Self {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Lossless element-wise cast (exact for f32 -> f64).
    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64().abs()).sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| !v.is_zero()).count()
    }

    /// Zero-pad to `rows x cols` (each must be >= the current extent).
    pub fn pad_to(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows < self.rows || cols < self.cols {
            return Err(Error::InvalidParameter(format!(
                "pad target {rows}x{cols} smaller than {}x{}",
                self.rows, self.cols
            )));
        }
        let mut out = DenseMatrix::zeros(rows, cols);
        for i in 0..self.rows {
            out.as_mut_slice()[i * cols..i * cols + self.cols].copy_from_slice(self.row(i));
        }
        Ok(out)
    }

    /// Top-left `rows x cols` sub-matrix.
    pub fn crop_to(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows > self.rows || cols > self.cols {
            return Err(Error::InvalidParameter(format!(
                "crop target {rows}x{cols} larger than {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(DenseMatrix::from_fn(rows, cols, |i, j| self.get(i, j)))
    }
}

// ---------------------------------------------------------------------------
// MaskedMatrix
// ---------------------------------------------------------------------------

/// Dense values plus a boolean keep-mask. Every value at a `false` mask
/// position is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix<T: Scalar> {
    dense: DenseMatrix<T>,
    mask: Vec<bool>,
}

impl<T: Scalar> MaskedMatrix<T> {
    /// Validating constructor: rejects nonzero values at masked-out positions.
    pub fn new(dense: DenseMatrix<T>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != dense.len() {
            return Err(Error::Structure(format!(
                "mask length {} does not match matrix size {}",
                mask.len(),
                dense.len()
            )));
        }
        for (v, &keep) in dense.as_slice().iter().zip(&mask) {
            if !keep && !v.is_zero() {
                return Err(Error::Structure(
                    "nonzero value at a masked-out position".into(),
                ));
            }
        }
        Ok(MaskedMatrix { dense, mask })
    }

    /// Applies `mask` to `dense`, zeroing dropped positions.
    pub fn apply_mask(dense: &DenseMatrix<T>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != dense.len() {
            return Err(Error::Structure(format!(
                "mask length {} does not match matrix size {}",
                mask.len(),
                dense.len()
            )));
        }
        let mut values = dense.as_slice().to_vec();
        for (v, &keep) in values.iter_mut().zip(&mask) {
            if !keep {
                *v = T::zero();
            }
        }
        let dense = DenseMatrix::new(dense.rows(), dense.cols(), values)?;
        Ok(MaskedMatrix { dense, mask })
    }

    /// Keep-everything mask.
    pub fn full(dense: DenseMatrix<T>) -> Self {
        let mask = vec![true; dense.len()];
        MaskedMatrix { dense, mask }
    }

    pub fn dense(&self) -> &DenseMatrix<T> {
        &self.dense
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dense.shape()
    }

    pub fn kept_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        self.dense.clone()
    }
}

// ---------------------------------------------------------------------------
// CsrMatrix
// ---------------------------------------------------------------------------

/// Compressed sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Structure("matrix must have rows >= 1, cols >= 1".into()));
        }
        if row_ptr.len() != rows + 1 {
            return Err(Error::Structure(format!(
                "row_ptr length {} must be rows+1 = {}",
                row_ptr.len(),
                rows + 1
            )));
        }
        if row_ptr[0] != 0 || *row_ptr.last().unwrap() != values.len() {
            return Err(Error::Structure(
                "row_ptr must start at 0 and end at nnz".into(),
            ));
        }
        if col_idx.len() != values.len() {
            return Err(Error::Structure("col_idx and values length mismatch".into()));
        }
        for w in row_ptr.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Structure("row_ptr must be non-decreasing".into()));
            }
            let row = &col_idx[w[0]..w[1]];
            for pair in row.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::Structure(
                        "column indices must be strictly increasing within a row".into(),
                    ));
                }
            }
            if let Some(&last) = row.last() {
                if last >= cols {
                    return Err(Error::Structure("column index out of range".into()));
                }
            }
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from dense, dropping exact zeros.
    pub fn from_dense(x: &DenseMatrix<T>) -> Self {
        let mut row_ptr = Vec::with_capacity(x.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                if !v.is_zero() {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        CsrMatrix {
            rows: x.rows(),
            cols: x.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds from dense keeping exactly the positions where `keep` is true
    /// (stored values may be explicit zeros).
    pub fn from_dense_with_support(x: &DenseMatrix<T>, keep: &[bool]) -> Result<Self> {
        if keep.len() != x.len() {
            return Err(Error::Structure("support length mismatch".into()));
        }
        let mut row_ptr = Vec::with_capacity(x.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                if keep[i * x.cols() + j] {
                    col_idx.push(j);
                    values.push(x.get(i, j));
                }
            }
            row_ptr.push(values.len());
        }
        Ok(CsrMatrix {
            rows: x.rows(),
            cols: x.cols(),
            row_ptr,
            col_idx,
            values,
        })
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

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Entries of row `i` as (column, value) pairs.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, &v)| (j, v))
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                out.set(i, j, v);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// CooMatrix
// ---------------------------------------------------------------------------

/// Coordinate-list storage, sorted by (row, col) with no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> CooMatrix<T> {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<(usize, usize, T)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Structure("matrix must have rows >= 1, cols >= 1".into()));
        }
        for w in entries.windows(2) {
            let a = (w[0].0, w[0].1);
            let b = (w[1].0, w[1].1);
            if b <= a {
                return Err(Error::Structure(
                    "entries must be sorted by (row, col) without duplicates".into(),
                ));
            }
        }
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Structure("coordinate out of range".into()));
            }
        }
        Ok(CooMatrix { rows, cols, entries })
    }

    /// Builds from dense, dropping exact zeros.
    pub fn from_dense(x: &DenseMatrix<T>) -> Self {
        let mut entries = Vec::new();
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                if !v.is_zero() {
                    entries.push((i, j, v));
                }
            }
        }
        CooMatrix {
            rows: x.rows(),
            cols: x.cols(),
            entries,
        }
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

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            out.set(i, j, v);
        }
        out
    }

    pub fn to_csr(&self) -> CsrMatrix<T> {
        let mut row_ptr = vec![0usize; self.rows + 1];
        for &(i, _, _) in &self.entries {
            row_ptr[i + 1] += 1;
        }
        for i in 0..self.rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = self.entries.iter().map(|&(_, j, _)| j).collect();
        let values = self.entries.iter().map(|&(_, _, v)| v).collect();
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn to_coo(&self) -> CooMatrix<T> {
        let mut entries = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                entries.push((i, j, v));
            }
        }
        CooMatrix {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix: any layout
// ---------------------------------------------------------------------------

/// A matrix in any of the supported layouts. This is the value type the
/// dispatch engine and the training graph move around.
#[derive(Debug, Clone)]
pub enum Matrix<T: Scalar> {
    Dense(DenseMatrix<T>),
    Masked(MaskedMatrix<T>),
    Csr(CsrMatrix<T>),
    Coo(CooMatrix<T>),
    GroupedNm(GroupedNMMatrix<T>),
}

impl<T: Scalar> Matrix<T> {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Matrix::Dense(x) => x.shape(),
            Matrix::Masked(x) => x.shape(),
            Matrix::Csr(x) => x.shape(),
            Matrix::Coo(x) => x.shape(),
            Matrix::GroupedNm(x) => x.shape(),
        }
    }

    pub fn layout_tag(&self) -> LayoutTag {
        match self {
            Matrix::Dense(_) => LayoutTag::Dense,
            Matrix::Masked(_) => LayoutTag::Masked,
            Matrix::Csr(_) => LayoutTag::Csr,
            Matrix::Coo(_) => LayoutTag::Coo,
            Matrix::GroupedNm(x) => LayoutTag::GroupedNm {
                n: x.n(),
                m: x.m(),
                g: x.g(),
            },
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        match self {
            Matrix::Dense(x) => x.clone(),
            Matrix::Masked(x) => x.to_dense(),
            Matrix::Csr(x) => x.to_dense(),
            Matrix::Coo(x) => x.to_dense(),
            Matrix::GroupedNm(x) => x.to_dense(),
        }
    }

    /// Keep-mask over stored positions: all-true for dense, the mask for
    /// masked, and the stored support for the sparse formats.
    pub fn support_mask(&self) -> Vec<bool> {
        match self {
            Matrix::Dense(x) => vec![true; x.len()],
            Matrix::Masked(x) => x.mask().to_vec(),
            Matrix::Csr(x) => {
                let mut mask = vec![false; x.rows() * x.cols()];
                for i in 0..x.rows() {
                    for (j, _) in x.row_entries(i) {
                        mask[i * x.cols() + j] = true;
                    }
                }
                mask
            }
            Matrix::Coo(x) => {
                let mut mask = vec![false; x.rows() * x.cols()];
                for &(i, j, _) in x.entries() {
                    mask[i * x.cols() + j] = true;
                }
                mask
            }
            Matrix::GroupedNm(x) => x.support_mask(),
        }
    }

    pub fn sparsity(&self) -> f64 {
        sparsity(self)
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of zero (or dropped) entries: `(size - stored) / size`.
///
/// Dense matrices count exact zeros; masked matrices count mask drops;
/// sparse formats count unstored positions.
pub fn sparsity<T: Scalar>(x: &Matrix<T>) -> f64 {
    let (rows, cols) = x.shape();
    let size = (rows * cols) as f64;
    let stored = match x {
        Matrix::Dense(d) => d.count_nonzero(),
        Matrix::Masked(m) => m.kept_count(),
        Matrix::Csr(c) => c.nnz(),
        Matrix::Coo(c) => c.nnz(),
        Matrix::GroupedNm(n) => n.stored_count(),
    } as f64;
    (size - stored) / size
}

/// Fraction of L1 magnitude preserved by pruning `original` down to `pruned`.
///
/// Requires that `pruned` really is a pruned version of `original`: every
/// nonzero of `pruned` must sit at the same coordinate with the same value.
pub fn energy<T: Scalar>(pruned: &DenseMatrix<T>, original: &DenseMatrix<T>) -> Result<f64> {
    if pruned.shape() != original.shape() {
        return Err(Error::ShapeMismatch {
            expected: original.shape(),
            got: pruned.shape(),
            context: "energy".into(),
        });
    }
    let denom = original.l1_norm();
    if denom == 0.0 {
        return Err(Error::DegenerateInput(
            "energy is undefined for an all-zero original".into(),
        ));
    }
    let mut num = 0.0;
    for (p, o) in pruned.as_slice().iter().zip(original.as_slice()) {
        if !p.is_zero() && p.as_f64() != o.as_f64() {
            return Err(Error::ContractViolation(
                "pruned tensor alters or adds values relative to the original".into(),
            ));
        }
        num += p.as_f64().abs();
    }
    Ok(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix<f64> {
        DenseMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn csr_identity_to_dense() {
        let csr = CsrMatrix::from_parts(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(csr.to_dense(), dense(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn empty_csr_to_dense_is_zero() {
        let csr = CsrMatrix::from_parts(3, 4, vec![0, 0, 0, 0], vec![], Vec::<f64>::new()).unwrap();
        let d = csr.to_dense();
        assert_eq!(d.shape(), (3, 4));
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coo_scatter() {
        let coo = CooMatrix::from_entries(2, 2, vec![(0, 1, 5.0), (1, 0, -2.0)]).unwrap();
        assert_eq!(coo.to_dense(), dense(2, 2, &[0.0, 5.0, -2.0, 0.0]));
    }

    #[test]
    fn malformed_structures_rejected() {
        assert!(CsrMatrix::from_parts(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::from_parts(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CooMatrix::from_entries(2, 2, vec![(1, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(CooMatrix::from_entries(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(CooMatrix::from_entries(2, 2, vec![(0, 5, 1.0)]).is_err());
        assert!(MaskedMatrix::new(dense(1, 2, &[1.0, 2.0]), vec![true, false]).is_err());
    }

    #[test]
    fn sparsity_basics() {
        let eye = dense(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(sparsity(&Matrix::Dense(eye)), 0.5);
        let zeros = DenseMatrix::<f64>::zeros(4, 4);
        assert_eq!(sparsity(&Matrix::Dense(zeros)), 1.0);
        let csr =
            CsrMatrix::from_parts(2, 3, vec![0, 2, 3], vec![0, 2, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(sparsity(&Matrix::Csr(csr)), 0.5);
    }

    #[test]
    fn energy_basics() {
        let orig = dense(2, 2, &[1.0, -2.0, 3.0, 0.0]);
        assert_eq!(energy(&orig, &orig).unwrap(), 1.0);
        // keep the two largest magnitudes {3, -2}
        let pruned = dense(2, 2, &[0.0, -2.0, 3.0, 0.0]);
        assert!((energy(&pruned, &orig).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let zero = DenseMatrix::<f64>::zeros(2, 2);
        assert_eq!(energy(&zero, &orig).unwrap(), 0.0);
    }

    #[test]
    fn energy_error_paths() {
        let orig = dense(1, 2, &[1.0, 2.0]);
        let zero = DenseMatrix::<f64>::zeros(1, 2);
        assert!(matches!(energy(&orig, &zero), Err(Error::DegenerateInput(_))));
        // value changed on a kept entry
        let tampered = dense(1, 2, &[1.5, 0.0]);
        assert!(matches!(
            energy(&tampered, &orig),
            Err(Error::ContractViolation(_))
        ));
        // support outside the original
        let orig2 = dense(1, 2, &[0.0, 2.0]);
        let outside = dense(1, 2, &[1.0, 0.0]);
        assert!(energy(&outside, &orig2).is_err());
    }

    #[test]
    fn energy_monotone_under_support_inclusion() {
        let x = DenseMatrix::<f64>::gaussian(8, 8, 7);
        // nested supports: top-16 subset of top-32
        let mut idx: Vec<usize> = (0..64).collect();
        idx.sort_by(|&a, &b| {
            x.as_slice()[b]
                .abs()
                .partial_cmp(&x.as_slice()[a].abs())
                .unwrap()
        });
        let keep = |k: usize| {
            let mut mask = vec![false; 64];
            for &i in idx.iter().take(k) {
                mask[i] = true;
            }
            MaskedMatrix::apply_mask(&x, mask).unwrap().to_dense()
        };
        let a = keep(16);
        let b = keep(32);
        assert!(energy(&a, &x).unwrap() <= energy(&b, &x).unwrap());
    }

    #[test]
    fn keep_all_roundtrip_preserves_sparsity_and_values() {
        let mut x = DenseMatrix::<f64>::gaussian(6, 5, 3);
        // ensure all stored values nonzero (gaussian draws are a.s. nonzero,
        // but make it explicit)
        for v in x.as_mut_slice() {
            if *v == 0.0 {
                *v = 1.0;
            }
        }
        let csr = CsrMatrix::from_dense(&x);
        assert_eq!(csr.to_dense(), x);
        let coo = CooMatrix::from_dense(&x);
        assert_eq!(coo.to_dense(), x);
        assert_eq!(
            sparsity(&Matrix::Csr(csr)),
            sparsity(&Matrix::Dense(x.clone()))
        );
        assert_eq!(sparsity(&Matrix::Coo(coo)), sparsity(&Matrix::Dense(x)));
    }

    #[test]
    fn csr_coo_roundtrip_exact() {
        let x = DenseMatrix::<f64>::gaussian(7, 9, 11);
        let masked = MaskedMatrix::apply_mask(
            &x,
            (0..63).map(|i| i % 3 != 0).collect::<Vec<_>>(),
        )
        .unwrap();
        let csr = CsrMatrix::from_dense(&masked.to_dense());
        let back = csr.to_coo().to_csr();
        assert_eq!(csr, back);
    }

    #[test]
    fn pad_and_crop() {
        let x = dense(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let padded = x.pad_to(3, 4).unwrap();
        assert_eq!(padded.get(1, 1), 4.0);
        assert_eq!(padded.get(2, 3), 0.0);
        assert_eq!(padded.crop_to(2, 2).unwrap(), x);
    }
}
