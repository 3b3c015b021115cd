//! Forward operations and their backward rules.

pub mod conv;
pub mod elementwise;
pub mod fused;
pub mod kernels;
pub mod linear;
pub mod reduce;
pub mod shape;

pub use elementwise::BinKind;
pub use reduce::ReduceKind;
