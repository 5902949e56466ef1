//! Scalar abstraction for the numeric analysis layer.
//!
//! Distance, density, and curve computations are generic over [`Real`] so the
//! same code runs in `f32` or `f64`. Pixel data stays `f32` (the tensor file
//! format and the wire protocol both fix 32-bit floats); everything
//! downstream of label counting defaults to [`Scalar`].

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the analysis code: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + Sum + Debug + Send + Sync + 'static {
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize fits in scalar")
    }
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}
