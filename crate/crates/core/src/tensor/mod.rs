//! Minimal dense-tensor engine with reverse-mode gradients.
//!
//! All tensors are row-major matrices (vectors are 1×n, scalars 1×1)
//! recorded on a [`Tape`]. Calling [`Tape::backward`] on a scalar loss
//! replays the recorded operations in reverse and accumulates gradients
//! for every staged parameter. A central-difference checker
//! ([`finite_difference_check`]) serves as the independent oracle for
//! the analytic gradients.

mod gradcheck;
mod params;
mod tape;
#[cfg(test)]
mod tests;

pub use gradcheck::{finite_difference_check, FdOptions, FdParamReport, FdReport};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Tensor};

use std::fmt;

/// Element type of the engine: 32-bit floats for training, 64-bit for
/// gradient verification.
pub trait Real:
    num_traits::Float + num_traits::NumAssignOps + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const LABEL: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const LABEL: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const LABEL: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}
