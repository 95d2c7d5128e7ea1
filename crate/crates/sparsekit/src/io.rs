//! Binary and CSV matrix file formats.
//!
//! Dense files ("STNM"): magic, little-endian u32 rows, u32 cols, u8 dtype
//! (0 = single, 1 = double), then row-major values.
//!
//! Grouped files ("STNG"): magic, little-endian u32 n, m, g, rows, cols,
//! u8 sparse_dim, u8 group_dim, u8 dtype, the u16 block index array, then
//! the packed values.
//!
//! CSV holds one matrix row per line, comma-separated.

use crate::error::{Error, Result};
use crate::matrix::{Axis, DenseMatrix};
use crate::nmg::{GroupedNMMatrix, NmgFormat};
use crate::scalar::{Dtype, Scalar};
use std::path::Path;

const DENSE_MAGIC: &[u8; 4] = b"STNM";
const GROUPED_MAGIC: &[u8; 4] = b"STNG";

/// A dense matrix in whichever precision the file declared.
#[derive(Debug, Clone)]
pub enum AnyDense {
    Single(DenseMatrix<f32>),
    Double(DenseMatrix<f64>),
}

impl AnyDense {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyDense::Single(_) => Dtype::Single,
            AnyDense::Double(_) => Dtype::Double,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            AnyDense::Single(x) => x.shape(),
            AnyDense::Double(x) => x.shape(),
        }
    }

    /// Widens to double; exact for both precisions.
    pub fn to_double(&self) -> DenseMatrix<f64> {
        match self {
            AnyDense::Single(x) => x.cast(),
            AnyDense::Double(x) => x.clone(),
        }
    }
}

/// A grouped matrix in whichever precision the file declared.
#[derive(Debug, Clone)]
pub enum AnyGrouped {
    Single(GroupedNMMatrix<f32>),
    Double(GroupedNMMatrix<f64>),
}

// ---------------------------------------------------------------------------
// Dense binary format
// ---------------------------------------------------------------------------

pub fn dense_to_bytes<T: Scalar>(x: &DenseMatrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + x.len() * std::mem::size_of::<T>());
    out.extend_from_slice(DENSE_MAGIC);
    out.extend_from_slice(&(x.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(x.cols() as u32).to_le_bytes());
    out.push(T::DTYPE.to_byte());
    for &v in x.as_slice() {
        v.write_le(&mut out);
    }
    out
}

fn take<'a>(src: &mut &'a [u8], len: usize, what: &str) -> Result<&'a [u8]> {
    if src.len() < len {
        return Err(Error::Io(format!("file truncated while reading {what}")));
    }
    let (head, tail) = src.split_at(len);
    *src = tail;
    Ok(head)
}

fn read_u32(src: &mut &[u8], what: &str) -> Result<u32> {
    let b = take(src, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_values<T: Scalar>(src: &mut &[u8], count: usize) -> Result<Vec<T>> {
    let width = std::mem::size_of::<T>();
    let bytes = take(src, count * width, "values")?;
    Ok(bytes.chunks_exact(width).map(T::read_le).collect())
}

pub fn dense_from_bytes(mut src: &[u8]) -> Result<AnyDense> {
    let magic = take(&mut src, 4, "magic")?;
    if magic != DENSE_MAGIC {
        return Err(Error::Io("not a dense matrix file (bad magic)".into()));
    }
    let rows = read_u32(&mut src, "rows")? as usize;
    let cols = read_u32(&mut src, "cols")? as usize;
    let dtype = Dtype::from_byte(take(&mut src, 1, "dtype")?[0])
        .ok_or_else(|| Error::Io("unknown dtype byte".into()))?;
    Ok(match dtype {
        Dtype::Single => {
            AnyDense::Single(DenseMatrix::new(rows, cols, read_values(&mut src, rows * cols)?)?)
        }
        Dtype::Double => {
            AnyDense::Double(DenseMatrix::new(rows, cols, read_values(&mut src, rows * cols)?)?)
        }
    })
}

pub fn write_dense<T: Scalar>(path: &Path, x: &DenseMatrix<T>) -> Result<()> {
    std::fs::write(path, dense_to_bytes(x))?;
    Ok(())
}

pub fn read_dense(path: &Path) -> Result<AnyDense> {
    dense_from_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Grouped binary format
// ---------------------------------------------------------------------------

pub fn grouped_to_bytes<T: Scalar>(x: &GroupedNMMatrix<T>) -> Vec<u8> {
    let fmt = x.format();
    let mut out = Vec::new();
    out.extend_from_slice(GROUPED_MAGIC);
    for v in [fmt.n, fmt.m, fmt.g, x.rows(), x.cols()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(fmt.sparse_dim.to_byte());
    out.push(fmt.group_dim.to_byte());
    out.push(T::DTYPE.to_byte());
    for &i in x.col_index() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for &v in x.values() {
        v.write_le(&mut out);
    }
    out
}

pub fn grouped_from_bytes(mut src: &[u8]) -> Result<AnyGrouped> {
    let magic = take(&mut src, 4, "magic")?;
    if magic != GROUPED_MAGIC {
        return Err(Error::Io("not a grouped matrix file (bad magic)".into()));
    }
    let n = read_u32(&mut src, "n")? as usize;
    let m = read_u32(&mut src, "m")? as usize;
    let g = read_u32(&mut src, "g")? as usize;
    let rows = read_u32(&mut src, "rows")? as usize;
    let cols = read_u32(&mut src, "cols")? as usize;
    let sparse_dim = Axis::from_byte(take(&mut src, 1, "sparse_dim")?[0])
        .ok_or_else(|| Error::Io("bad sparse_dim byte".into()))?;
    let group_dim = Axis::from_byte(take(&mut src, 1, "group_dim")?[0])
        .ok_or_else(|| Error::Io("bad group_dim byte".into()))?;
    let dtype = Dtype::from_byte(take(&mut src, 1, "dtype")?[0])
        .ok_or_else(|| Error::Io("unknown dtype byte".into()))?;
    let fmt = NmgFormat::new(n, m, g, sparse_dim, group_dim)?;
    fmt.check_divisibility(rows, cols)?;
    let (sparse_len, group_len) = fmt.extents(rows, cols);
    let blocks = (sparse_len / m) * (group_len / fmt.chunk_width()) * fmt.chunk_width();
    let idx_bytes = take(&mut src, blocks * 2, "col_index")?;
    let col_index: Vec<u16> = idx_bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    Ok(match dtype {
        Dtype::Single => AnyGrouped::Single(GroupedNMMatrix::from_parts(
            fmt,
            rows,
            cols,
            col_index,
            read_values(&mut src, blocks * n)?,
        )?),
        Dtype::Double => AnyGrouped::Double(GroupedNMMatrix::from_parts(
            fmt,
            rows,
            cols,
            col_index,
            read_values(&mut src, blocks * n)?,
        )?),
    })
}

pub fn write_grouped<T: Scalar>(path: &Path, x: &GroupedNMMatrix<T>) -> Result<()> {
    std::fs::write(path, grouped_to_bytes(x))?;
    Ok(())
}

pub fn read_grouped(path: &Path) -> Result<AnyGrouped> {
    grouped_from_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub fn dense_to_csv<T: Scalar>(x: &DenseMatrix<T>) -> String {
    let mut out = String::new();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn dense_from_csv<T: Scalar>(text: &str) -> Result<DenseMatrix<T>> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Io(format!("csv line {}: {e}", lineno + 1)))?;
        rows.push(row.into_iter().map(T::from_f64).collect());
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Io("csv holds no values".into()));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Io("csv rows have unequal lengths".into()));
    }
    let values = rows.into_iter().flatten().collect();
    DenseMatrix::new(text.lines().filter(|l| !l.trim().is_empty()).count(), cols, values)
}

pub fn write_csv<T: Scalar>(path: &Path, x: &DenseMatrix<T>) -> Result<()> {
    std::fs::write(path, dense_to_csv(x))?;
    Ok(())
}

pub fn read_csv<T: Scalar>(path: &Path) -> Result<DenseMatrix<T>> {
    dense_from_csv(&String::from_utf8_lossy(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmg::from_dense_greedy;

    #[test]
    fn dense_roundtrip_both_precisions() {
        let x32 = DenseMatrix::<f32>::gaussian(3, 5, 1);
        let bytes = dense_to_bytes(&x32);
        assert_eq!(&bytes[..4], b"STNM");
        assert_eq!(bytes[12], 0);
        match dense_from_bytes(&bytes).unwrap() {
            AnyDense::Single(back) => assert_eq!(back, x32),
            _ => panic!("dtype lost"),
        }
        let x64 = DenseMatrix::<f64>::gaussian(4, 2, 2);
        let bytes = dense_to_bytes(&x64);
        assert_eq!(bytes[12], 1);
        match dense_from_bytes(&bytes).unwrap() {
            AnyDense::Double(back) => assert_eq!(back, x64),
            _ => panic!("dtype lost"),
        }
    }

    #[test]
    fn grouped_roundtrip() {
        let fmt = NmgFormat::new(2, 4, 3, Axis::Cols, Axis::Rows).unwrap();
        let x = DenseMatrix::<f32>::gaussian(36, 8, 3);
        let enc = from_dense_greedy(&x, fmt).unwrap();
        let bytes = grouped_to_bytes(&enc);
        assert_eq!(&bytes[..4], b"STNG");
        match grouped_from_bytes(&bytes).unwrap() {
            AnyGrouped::Single(back) => {
                assert_eq!(back.col_index(), enc.col_index());
                assert_eq!(back.values(), enc.values());
                assert_eq!(back.to_dense(), enc.to_dense());
            }
            _ => panic!("dtype lost"),
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(dense_from_bytes(b"NOPE").is_err());
        let x = DenseMatrix::<f32>::gaussian(2, 2, 1);
        let mut bytes = dense_to_bytes(&x);
        bytes.truncate(bytes.len() - 2);
        assert!(dense_from_bytes(&bytes).is_err());
        assert!(grouped_from_bytes(b"STNGxx").is_err());
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let x = DenseMatrix::new(2, 3, vec![1.0f64, -2.5, 3.0, 0.0, 4.25, -0.125]).unwrap();
        let text = dense_to_csv(&x);
        assert_eq!(dense_from_csv::<f64>(&text).unwrap(), x);
        assert!(dense_from_csv::<f64>("1,2\n3").is_err());
        assert!(dense_from_csv::<f64>("").is_err());
        assert!(dense_from_csv::<f64>("a,b").is_err());
    }
}
