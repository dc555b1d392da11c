//! Numerical core of `dragkit`, a mask-free and prompt-free point-drag image
//! editor running over a small deterministic diffusion backend.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: image and file IO, configuration and the HTTP service live in
//! the `dragkit` crate.
//!
//! Module map:
//!
//! - [`fields`]: dense grids, bilinear sampling, separable Gaussian blur.
//! - [`softmask`]: soft editable-region masks rasterized from drag paths.
//! - [`lwf`]: latent warpage, the geometric initialization of a drag.
//! - [`diffusion`]: noise schedule, toy denoiser, DDIM stepping, features.
//! - [`readout`]: appearance readout head, triplet training, guidance loss.
//! - [`engine`]: drag/motion losses, masked updates, point tracking, the
//!   alternating drag/denoise loop and the end-to-end edit.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod diffusion;
pub mod engine;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod lwf;
pub(crate) mod math;
pub mod readout;
pub mod softmask;

pub use error::{Error, Result};
