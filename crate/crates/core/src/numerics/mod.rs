//! Tensor math, the real FFT pair, reverse-mode gradients, Adam and the
//! finite-difference checker.

mod adam;
pub mod checkpoint;
pub mod fft;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fft::{irfft, rfft};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamReport};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{bce, layer_norm, sigmoid, softmax_in_place, Tape, Var, BCE_EPS};
pub use tensor::{ComplexTensor, Tensor};
