//! Differentiable stroke-based painting engine.
//!
//! The crate covers the whole pipeline from tablet input to optimized stroke
//! plans: brush models and compositing ([`brush`]), spline stroke expansion
//! ([`stroke`]), differentiable rendering with Adam/cosine optimization
//! ([`diff`]), coarse-to-fine stroke sequencing ([`sequencer`]), pluggable
//! intent and next-stroke providers ([`predictor`]), the interactive session
//! and its wire protocol ([`session`]), file formats ([`io`]) and image
//! metrics ([`metrics`]).

pub mod brush;
pub mod canvas;
pub mod diff;
pub mod error;
pub mod io;
pub mod metrics;
pub mod predictor;
pub mod sequencer;
pub mod session;
pub mod stroke;

pub use canvas::{Canvas, Mask, Rect, Rgb};
pub use error::{Error, Result};
