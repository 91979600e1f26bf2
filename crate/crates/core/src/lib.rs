//! Differentiable 3D Gaussian splatting on the CPU, with uncertainty-aware
//! (stochastic) opacity and an illumination-conditioned color field that is
//! shared by every rendered view.
//!
//! The geometric and rendering kernels are generic over [`Real`] so they can
//! run in `f32` or `f64`; training and the neural field run in `f64`. The
//! aliases at the crate root fix the scalar to `f64`.

// `!(x > 0.0)` rejects NaN on purpose; small matrix kernels index by hand.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod archive;
pub mod error;
pub mod field;
pub mod gradcheck;
pub mod numerics;
pub mod render;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use numerics::Real;

pub type Scene = scene::Scene<f64>;
pub type Gaussian = scene::GaussianPrimitive<f64>;
pub type Camera = scene::Camera<f64>;
pub type Image = scene::Image<f64>;
pub type RenderOutput = render::RenderOutput<f64>;
pub type RenderGrads = render::RenderGrads<f64>;
