//! Analysis and simulation core for parallel single-phase inverters under isochronous
//! voltage-active-power droop.
//!
//! `no_std` with `alloc`. Transcendental functions come from `libm` through `num-traits`.

#![no_std]
// Negated comparisons such as `!(x > 0.0)` reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

// The `#[allow(unused_imports)]` on each libm `Float` import covers builds where std is linked
// and its inherent float methods take precedence.

pub mod clock;
pub mod controller;
pub mod droop;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod net;
pub mod poly;
pub mod presets;
pub mod smallsignal;
pub mod steady_state;
pub mod timedomain;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
