//! Signal-aware wavelet positional encoding for time-series transformers.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense `f64` arrays and a reverse-mode tape.
//! * [`wavelet`]: periodized multi-level DWT/IDWT, on tensors and on the tape.
//! * [`dywpe`]: the wavelet positional encoder and its two ablations.
//! * [`pe`]: sinusoidal, learnable, rotary and ALiBi baselines.
//! * [`model`], [`train`], [`data`]: a small patch transformer classifier,
//!   its training loop and synthetic datasets.
//! * [`config`], [`commands`] and [`schema`]: the experiment runner behind
//!   the `dywpe` CLI and checks for the files it writes.

pub mod autodiff;
pub mod commands;
pub mod config;
pub mod data;
pub mod dywpe;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod pe;
pub mod schema;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
