//! Element type abstraction.
//!
//! All storage formats and kernels are generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Reference checks and conversion
//! decisions accumulate in `f64` regardless of the storage precision;
//! kernels compute in the storage precision.

use std::fmt;

/// Storage precision tag carried by the binary file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Single,
    Double,
}

impl Dtype {
    pub fn from_byte(b: u8) -> Option<Dtype> {
        match b {
            0 => Some(Dtype::Single),
            1 => Some(Dtype::Double),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Dtype::Single => 0,
            Dtype::Double => 1,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::Single => 4,
            Dtype::Double => 8,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::Single => write!(f, "single"),
            Dtype::Double => write!(f, "double"),
        }
    }
}

/// Matrix element type: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Append the little-endian byte representation to `out`.
    fn write_le(self, out: &mut Vec<u8>);
    /// Read one value from the front of `src` (must hold enough bytes).
    fn read_le(src: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::Single;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(src: &[u8]) -> Self {
        f32::from_le_bytes([src[0], src[1], src[2], src[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::Double;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(src: &[u8]) -> Self {
        f64::from_le_bytes([
            src[0], src[1], src[2], src[3], src[4], src[5], src[6], src[7],
        ])
    }
}
