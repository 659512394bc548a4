//! Wavelet-decomposed iterative stereo matching.
//!
//! The crate covers the whole pipeline at desk scale: a small
//! reverse-mode tensor engine, Haar wavelet pyramids, separate
//! high/low-frequency feature extractors, an all-pairs correlation
//! volume with windowed lookup, a recurrent update operator that keeps
//! the extracted high-frequency features fixed across iterations, a toy
//! trainer, and a frequency-split evaluation protocol.

pub mod autodiff;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod correlation;
pub mod error;
pub mod freqeval;
pub mod gradcheck;
pub mod gru;
pub mod hpu;
pub mod io;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
