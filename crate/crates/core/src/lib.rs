//! Functional principal components for multivariate functional data whose
//! components mix continuous, zero-truncated, ordinal and binary types, via a
//! latent Gaussian copula process.

pub mod bridge;
pub mod covfit;
pub mod data;
pub mod error;
pub mod fpca;
pub mod kendall;
pub mod latent;
pub mod marginals;
pub mod mvn;
pub mod pipeline;
mod serde_matrix;
pub mod sim;

pub use error::{Error, Result};
