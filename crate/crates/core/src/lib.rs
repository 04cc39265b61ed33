//! Online style adaptation and object-aware contrastive alignment primitives.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a small row-major dense array used by everything else.
//! - [`stats`]: channel-wise style statistics and the diagonal-Gaussian
//!   Wasserstein distance between them.
//! - [`bank`]: the self-organizing style memory bank (EMA fusion, LFU
//!   replacement under an adaptive threshold, fusion-only test-time mode).
//! - [`projection`]: softmax-weighted AdaIN rectification against a bank.
//! - [`gating`]: per-category box masks and their token-aligned form.
//! - [`attention`]: class queries updated by masked multi-head cross-attention.
//! - [`contrastive`]: the cross-domain contrastive loss with analytic gradients.
//! - [`params`]: a flat named-tensor container for attention parameters.

pub mod attention;
pub mod bank;
pub mod contrastive;
pub mod error;
pub mod gating;
pub mod params;
pub mod projection;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};

/// Variance floor added under the square root when measuring channel std.
pub const EPSILON: f64 = 1e-6;
