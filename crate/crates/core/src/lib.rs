//! Constrained and preconditioned stochastic gradient approximation.
//!
//! An unknown function `f` is observed only through random batches of
//! samples. Each step draws a batch, forms the batch-averaged gradient
//! `b^k - A_k u^{k-1}` and applies a fixed preconditioner `(B + γC)^{-1}`:
//!
//! ```text
//! u^k = u^{k-1} + μ_k (B + γC)^{-1} (b^k - A_k u^{k-1})
//! ```
//!
//! `B` approximates the Gram matrix `A`, and `C = DᵀD` encodes a soft
//! constraint on the update (smoothness of a look-up table, bounded
//! derivative of a polynomial) that shapes the iterates without moving their
//! limit.
//!
//! Modules, bottom-up: [`numerics`], [`basis`], [`sampling`],
//! [`regularization`], [`engine`], [`analysis`], plus ready-made
//! [`scenario`]s for the camera-response and equalizer experiments.

// `!(x < y)` is used on purpose: it also rejects NaN. `RunAborted` carries
// the partial trace, so its size is by design.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::result_large_err
)]

pub mod analysis;
pub mod basis;
pub mod engine;
mod error;
pub mod numerics;
pub mod regularization;
pub mod sampling;
pub mod scenario;

pub use error::{Error, Result};
