//! Sparsifiers: procedures that decide which values of a tensor to keep.
//!
//! Every sparsifier here is deterministic. Kept values are copied
//! unmodified; dropped positions become exact zeros. Ties are broken by
//! preferring the lower linear index. The random-fraction sparsifier uses a
//! counter-based generator keyed by (seed, entry index), so its mask does
//! not depend on traversal order.

use crate::error::{Error, Result};
use crate::matrix::{Axis, CooMatrix, CsrMatrix, DenseMatrix, MaskedMatrix, Matrix};
use crate::nmg::{self, GroupedNMMatrix, NmgFormat};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Specs and classes
// ---------------------------------------------------------------------------

/// Description of a sparsifier and its parameters.
///
/// Serializes to JSON as an object with a `kind` field, e.g.
/// `{"kind": "scalar_fraction", "fraction": 0.75}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsifierSpec {
    /// Preserve every produced value.
    KeepAll,
    /// Drop each entry independently with probability `p`.
    RandomFraction { p: f64, seed: u64 },
    /// Drop entries with |x| below the threshold.
    ScalarThreshold { threshold: f64 },
    /// Keep the n largest magnitudes in every aligned m-block along `axis`.
    PerBlockFraction { n: usize, m: usize, axis: Axis },
    /// Keep the ceil((1 - fraction) * size) largest magnitudes globally.
    ScalarFraction { fraction: f64 },
    /// Drop whole blocks, lowest summed magnitude first, until `fraction`
    /// of the blocks are gone.
    BlockwiseFraction {
        fraction: f64,
        block_rows: usize,
        block_cols: usize,
    },
    /// Mask from the greedy grouped n:m conversion.
    GroupedNm {
        n: usize,
        m: usize,
        g: usize,
        sparse_dim: Axis,
        group_dim: Axis,
    },
    /// Re-sparsify into the layout and pattern of a reference tensor;
    /// applied through [`apply_same_format`].
    SameFormat,
}

/// How much of the output a sparsifier must see before it can decide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsifierClass {
    /// Decides per value in a single pass.
    Streaming,
    /// Needs a small window of values.
    Blocking,
    /// Needs the fully materialized tensor.
    Materializing,
}

/// Parameterless sparsifier discriminant, used in dispatch keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SparsifierKind {
    KeepAll,
    RandomFraction,
    ScalarThreshold,
    PerBlockFraction,
    ScalarFraction,
    BlockwiseFraction,
    GroupedNm,
    SameFormat,
}

impl SparsifierSpec {
    pub fn kind(&self) -> SparsifierKind {
        match self {
            SparsifierSpec::KeepAll => SparsifierKind::KeepAll,
            SparsifierSpec::RandomFraction { .. } => SparsifierKind::RandomFraction,
            SparsifierSpec::ScalarThreshold { .. } => SparsifierKind::ScalarThreshold,
            SparsifierSpec::PerBlockFraction { .. } => SparsifierKind::PerBlockFraction,
            SparsifierSpec::ScalarFraction { .. } => SparsifierKind::ScalarFraction,
            SparsifierSpec::BlockwiseFraction { .. } => SparsifierKind::BlockwiseFraction,
            SparsifierSpec::GroupedNm { .. } => SparsifierKind::GroupedNm,
            SparsifierSpec::SameFormat => SparsifierKind::SameFormat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsifierSpec::KeepAll | SparsifierSpec::SameFormat => Ok(()),
            SparsifierSpec::RandomFraction { p, .. } => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "drop probability must be in [0,1], got {p}"
                    )))
                }
            }
            SparsifierSpec::ScalarThreshold { threshold } => {
                if threshold >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "threshold must be nonnegative, got {threshold}"
                    )))
                }
            }
            SparsifierSpec::PerBlockFraction { n, m, .. } => {
                if n >= 1 && n < m {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "per-block fraction requires 1 <= n < m, got n={n}, m={m}"
                    )))
                }
            }
            SparsifierSpec::ScalarFraction { fraction } => {
                if (0.0..=1.0).contains(&fraction) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "fraction must be in [0,1], got {fraction}"
                    )))
                }
            }
            SparsifierSpec::BlockwiseFraction {
                fraction,
                block_rows,
                block_cols,
            } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::InvalidParameter(format!(
                        "fraction must be in [0,1], got {fraction}"
                    )));
                }
                if block_rows == 0 || block_cols == 0 {
                    return Err(Error::InvalidParameter("block sizes must be >= 1".into()));
                }
                Ok(())
            }
            SparsifierSpec::GroupedNm {
                n,
                m,
                g,
                sparse_dim,
                group_dim,
            } => NmgFormat::new(n, m, g, sparse_dim, group_dim).map(|_| ()),
        }
    }
}

/// Sparsifier class per taxonomy: keep-all / random-fraction /
/// scalar-threshold stream; per-block-fraction and grouped n:m need a
/// block window; the global-fraction sparsifiers materialize. SameFormat
/// reuses a stored reference pattern in one pass, hence streaming.
pub fn classify(spec: &SparsifierSpec) -> SparsifierClass {
    match spec.kind() {
        SparsifierKind::KeepAll
        | SparsifierKind::RandomFraction
        | SparsifierKind::ScalarThreshold
        | SparsifierKind::SameFormat => SparsifierClass::Streaming,
        SparsifierKind::PerBlockFraction | SparsifierKind::GroupedNm => SparsifierClass::Blocking,
        SparsifierKind::ScalarFraction | SparsifierKind::BlockwiseFraction => {
            SparsifierClass::Materializing
        }
    }
}

// ---------------------------------------------------------------------------
// Counter-based Bernoulli generator
// ---------------------------------------------------------------------------

/// splitmix64-style mixer keyed by (seed, counter).
fn mix64(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in [0,1) for one entry.
fn unit_uniform(seed: u64, counter: u64) -> f64 {
    (mix64(seed, counter) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

// ---------------------------------------------------------------------------
// apply
// ---------------------------------------------------------------------------

/// Rounds values that are within fp noise of an integer before taking ceil,
/// so fraction arithmetic like (1 - 0.9) * 10 lands on the intended count.
fn ceil_snapped(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Applies a sparsifier to a dense matrix, producing a masked result.
/// Kept values are unmodified. SameFormat needs a reference tensor and is
/// rejected here; see [`apply_same_format`].
pub fn apply<T: Scalar>(spec: &SparsifierSpec, x: &DenseMatrix<T>) -> Result<MaskedMatrix<T>> {
    spec.validate()?;
    let size = x.len();
    match *spec {
        SparsifierSpec::KeepAll => Ok(MaskedMatrix::full(x.clone())),
        SparsifierSpec::RandomFraction { p, seed } => {
            let mask: Vec<bool> = (0..size as u64)
                .map(|i| unit_uniform(seed, i) >= p)
                .collect();
            MaskedMatrix::apply_mask(x, mask)
        }
        SparsifierSpec::ScalarThreshold { threshold } => {
            let mask: Vec<bool> = x
                .as_slice()
                .iter()
                .map(|v| v.as_f64().abs() >= threshold)
                .collect();
            MaskedMatrix::apply_mask(x, mask)
        }
        SparsifierSpec::PerBlockFraction { n, m, axis } => {
            let axis_len = match axis {
                Axis::Rows => x.rows(),
                Axis::Cols => x.cols(),
            };
            if axis_len % m != 0 {
                return Err(Error::Divisibility {
                    axis_len,
                    divisor: m,
                    context: "per-block fraction axis".into(),
                });
            }
            let mut mask = vec![false; size];
            let blocks = size / m;
            // element k of block b, with m-blocks running along `axis`
            let cols = x.cols();
            let block_elem = |b: usize, k: usize| -> usize {
                match axis {
                    Axis::Cols => {
                        let per_row = cols / m;
                        (b / per_row) * cols + (b % per_row) * m + k
                    }
                    Axis::Rows => {
                        let per_col = x.rows() / m;
                        ((b % per_col) * m + k) * cols + b / per_col
                    }
                }
            };
            let mut idx: Vec<usize> = Vec::with_capacity(m);
            for b in 0..blocks {
                idx.clear();
                idx.extend((0..m).map(|k| block_elem(b, k)));
                idx.sort_by(|&a, &b| {
                    x.as_slice()[b]
                        .as_f64()
                        .abs()
                        .total_cmp(&x.as_slice()[a].as_f64().abs())
                        .then_with(|| a.cmp(&b))
                });
                for &i in idx.iter().take(n) {
                    mask[i] = true;
                }
            }
            MaskedMatrix::apply_mask(x, mask)
        }
        SparsifierSpec::ScalarFraction { fraction } => {
            let keep = ceil_snapped((1.0 - fraction) * size as f64).min(size);
            let mut order: Vec<usize> = (0..size).collect();
            let by_magnitude_desc = |&a: &usize, &b: &usize| {
                x.as_slice()[b]
                    .as_f64()
                    .abs()
                    .total_cmp(&x.as_slice()[a].as_f64().abs())
                    .then_with(|| a.cmp(&b))
            };
            // selection, not a full sort; the comparator is a strict total
            // order, so the kept set is still unique and deterministic
            if keep > 0 && keep < size {
                order.select_nth_unstable_by(keep - 1, by_magnitude_desc);
            }
            let mut mask = vec![false; size];
            for &i in order.iter().take(keep) {
                mask[i] = true;
            }
            MaskedMatrix::apply_mask(x, mask)
        }
        SparsifierSpec::BlockwiseFraction {
            fraction,
            block_rows,
            block_cols,
        } => {
            if x.rows() % block_rows != 0 {
                return Err(Error::Divisibility {
                    axis_len: x.rows(),
                    divisor: block_rows,
                    context: "blockwise fraction rows".into(),
                });
            }
            if x.cols() % block_cols != 0 {
                return Err(Error::Divisibility {
                    axis_len: x.cols(),
                    divisor: block_cols,
                    context: "blockwise fraction cols".into(),
                });
            }
            let brows = x.rows() / block_rows;
            let bcols = x.cols() / block_cols;
            let nblocks = brows * bcols;
            let mut scores: Vec<(f64, usize)> = Vec::with_capacity(nblocks);
            for bi in 0..brows {
                for bj in 0..bcols {
                    let mut s = 0.0;
                    for r in 0..block_rows {
                        for c in 0..block_cols {
                            s += x.get(bi * block_rows + r, bj * block_cols + c).as_f64().abs();
                        }
                    }
                    scores.push((s, bi * bcols + bj));
                }
            }
            let drop = ceil_snapped(fraction * nblocks as f64).min(nblocks);
            let ascending = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
            };
            if drop > 0 && drop < nblocks {
                scores.select_nth_unstable_by(drop - 1, ascending);
            }
            let mut mask = vec![true; size];
            for &(_, b) in scores.iter().take(drop) {
                let (bi, bj) = (b / bcols, b % bcols);
                for r in 0..block_rows {
                    for c in 0..block_cols {
                        mask[(bi * block_rows + r) * x.cols() + bj * block_cols + c] = false;
                    }
                }
            }
            MaskedMatrix::apply_mask(x, mask)
        }
        SparsifierSpec::GroupedNm {
            n,
            m,
            g,
            sparse_dim,
            group_dim,
        } => {
            let fmt = NmgFormat::new(n, m, g, sparse_dim, group_dim)?;
            let enc = nmg::from_dense_greedy(x, fmt)?;
            MaskedMatrix::apply_mask(x, enc.support_mask())
        }
        SparsifierSpec::SameFormat => Err(Error::InvalidParameter(
            "SameFormat needs a reference tensor; use apply_same_format".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// SameFormat
// ---------------------------------------------------------------------------

/// Which route a grouped-n:m SameFormat application took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SameFormatPath {
    /// Supports matched; the reference assignment was reused and only the
    /// values refreshed.
    ReusedAssignment,
    /// Supports differed; a full greedy re-sparsification ran.
    Reencoded,
}

/// Re-sparsifies `x` into the layout of an existing grouped matrix. When
/// the nonzero support of `x` matches the reference's decoded support, the
/// stored assignment is reused and only values are refreshed.
pub fn same_format_nmg<T: Scalar>(
    reference: &GroupedNMMatrix<T>,
    x: &DenseMatrix<T>,
) -> Result<(GroupedNMMatrix<T>, SameFormatPath)> {
    if reference.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.shape(),
            got: x.shape(),
            context: "same_format_nmg".into(),
        });
    }
    let decoded = reference.to_dense();
    let supports_match = decoded
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .all(|(a, b)| a.is_zero() == b.is_zero());
    if supports_match {
        Ok((reference.reencode_values(x)?, SameFormatPath::ReusedAssignment))
    } else {
        Ok((
            nmg::from_dense_greedy(x, reference.format())?,
            SameFormatPath::Reencoded,
        ))
    }
}

/// Re-sparsifies `x` into the same layout and pattern as `reference`.
///
/// Masked references reuse their mask; CSR/COO references reuse their
/// stored support; grouped references go through [`same_format_nmg`].
pub fn apply_same_format<T: Scalar>(reference: &Matrix<T>, x: &DenseMatrix<T>) -> Result<Matrix<T>> {
    if reference.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.shape(),
            got: x.shape(),
            context: "apply_same_format".into(),
        });
    }
    match reference {
        Matrix::Dense(_) => Ok(Matrix::Dense(x.clone())),
        Matrix::Masked(r) => Ok(Matrix::Masked(MaskedMatrix::apply_mask(
            x,
            r.mask().to_vec(),
        )?)),
        Matrix::Csr(r) => Ok(Matrix::Csr(CsrMatrix::from_dense_with_support(
            x,
            &Matrix::Csr(r.clone()).support_mask(),
        )?)),
        Matrix::Coo(r) => {
            let support = Matrix::Coo(r.clone()).support_mask();
            let mut entries = Vec::with_capacity(r.nnz());
            for i in 0..x.rows() {
                for j in 0..x.cols() {
                    if support[i * x.cols() + j] {
                        entries.push((i, j, x.get(i, j)));
                    }
                }
            }
            Ok(Matrix::Coo(CooMatrix::from_entries(
                x.rows(),
                x.cols(),
                entries,
            )?))
        }
        Matrix::GroupedNm(r) => Ok(Matrix::GroupedNm(same_format_nmg(r, x)?.0)),
    }
}
