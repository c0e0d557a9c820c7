//! Numerical kernels shared by the analytic and sampling code.

pub mod bessel;
pub mod pchip;
pub mod quad;

pub use pchip::MonotoneCubic;
