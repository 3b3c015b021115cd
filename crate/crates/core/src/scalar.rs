//! Scalar type abstraction: f32 for training, f64 for gradient checking.

use core::fmt;

/// On-disk / runtime scalar type tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element type usable by every tensor operation.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn of_f64(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite f64 conversion")
    }

    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("finite scalar")
    }

    fn from_usize_(v: usize) -> Self {
        Self::of_f64(v as f64)
    }
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
}
