//! Gaussian process interpolation with stationary kernels, every common
//! lengthscale-estimation objective, and diagnostics for the degenerate
//! behaviour those objectives exhibit on constant-shift data: infinite
//! lengthscale estimates, zero-variance predictive distributions, and a
//! Hellinger-distance discontinuity at constant data. A high-precision
//! module reproduces the coalescence limit of the data-fit term for the
//! Gaussian kernel.

pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod kernels;
pub mod objectives;
pub mod posterior;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{GpError, Result};
