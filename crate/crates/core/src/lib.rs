//! Core algorithms for recovering closed-form spectral-index expressions from
//! multi-band raster imagery.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO; file formats and the
//! command-line driver live in the companion `satform` crate.
//!
//! Layout:
//! - [`expr`] — expression trees over band variables and constants: parsing,
//!   printing, prefix token serialization, protected evaluation, gradients.
//! - [`raster`] — the in-memory raster container, synthetic scene generation,
//!   patch extraction, and dataset assembly.
//! - [`indices`] — reference spectral indices (NDVI, GNDVI, SAVI, EVI, NDWI)
//!   and the height-driven biomass/carbon surrogates.
//! - [`loss`] — consistency, MSE, cross-entropy, and physics loss terms plus
//!   the weighted total.
//! - [`tensor`] — a dense f64 tape with reverse-mode differentiation.
//! - [`nn`] — toy-scale encoder/decoder/fusion blocks and the Adam update.
//! - [`search`] — grammar-masked beam decoding, BFGS constant refinement, and
//!   candidate selection.
//! - [`pipeline`] — staged training, evaluation metrics, and the sweep harness.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod expr;
pub mod indices;
pub mod loss;
pub mod math;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod search;
pub mod tensor;
