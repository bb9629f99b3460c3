//! Matrix-valued statistical distances between two Gaussian populations.
//!
//! The scalar Mahalanobis, Bhattacharyya, Chernoff and Kullback–Leibler
//! distances between `N(μ₁, Σ₁)` and `N(μ₂, Σ₂)` can each be written as the
//! trace of an `n×n` matrix. This crate computes those matrices, collapses them
//! into per-element distance-accumulation images, and clusters the elements
//! with complete-linkage agglomeration over the matrix entries.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`spd`] | certified symmetric eigendecomposition, SPD inverse/power/log |
//! | [`estimation`] | mean and unbiased covariance of a sample set |
//! | [`distance`] | distance matrices, scalar closed forms, quadrature oracle |
//! | [`accumulation`] | row+column accumulation and devectorization |
//! | [`clustering`] | stepwise dendrogram, cuts and label images |
//! | [`cifar`] | CIFAR-10 binary batch ingest |
//! | [`io`] | raw `f64` payloads, JSON headers, PGM/PPM writers |
//! | [`pipeline`] | end-to-end run and the `verify` suite |

pub mod accumulation;
pub mod cifar;
pub mod clustering;
pub mod distance;
pub mod error;
pub mod estimation;
pub mod io;
pub mod pipeline;
pub mod spd;
pub mod verify;

pub use error::{Error, Result};
