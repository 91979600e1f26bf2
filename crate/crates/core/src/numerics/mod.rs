//! Scalar kernels, the real spherical-harmonics basis and a small
//! define-by-run reverse-mode tape.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub mod scalar;
pub mod sh;
pub mod tape;
pub mod tensor;

pub use scalar::{logit, sigmoid, sigmoid_grad, softplus, softplus_inverse, try_sigmoid};
pub use sh::{sh_basis, sh_coeff_count, sh_evaluate};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Floating-point scalar used by the generic kernels.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every literal used by this crate is
    /// representable in `f32`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
