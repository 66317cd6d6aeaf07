//! Scalar abstraction for the numeric core.
//!
//! The math layers (autodiff tape, collision-avoidance geometry) are generic
//! over [`Real`]; the training stack and all file formats are pinned to
//! [`Scalar`] (`f64`) so that oracle comparisons and checkpoints are exact.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numeric core: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal (panics only on values unrepresentable as `Self`).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Concrete scalar used by the simulators, encoders, trainer, and file formats.
pub type Scalar = f64;
