//! Whitening of pre-trained item embeddings, geometric diagnostics of
//! embedding spaces, and a causal self-attention sequential recommender that
//! consumes the whitened features.
//!
//! The linear-algebra, whitening and diagnostics layers are generic over the
//! scalar type ([`Real`]); the aliases below fix the double-precision
//! instantiation used by the model, data and evaluation layers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod whitening;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision dense matrix.
pub type Matrix = linalg::Mat<f64>;
/// Single-precision dense matrix.
pub type Matrix32 = linalg::Mat<f32>;
/// A `d×n` matrix of item feature vectors, one column per item.
pub type EmbeddingMatrix = Matrix;
pub type EigenResult = linalg::EigenResult<f64>;
pub type WhiteningTransform = whitening::WhiteningTransform<f64>;
pub type WhitenedEmbeddings = whitening::WhitenedEmbeddings<f64>;
