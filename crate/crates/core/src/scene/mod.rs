//! Gaussian primitives, pinhole cameras, EWA projection and the on-disk
//! formats for scenes, camera sets and images.

mod camera;
mod camera_io;
mod gaussian;
pub mod mat;
mod ppm;
pub(crate) mod projection;
mod scene_io;

pub use camera::Camera;
pub use camera_io::{parse_camera_set, read_camera_set, render_camera_set, write_camera_set};
pub use gaussian::{GaussianPrimitive, Image, Scene, DEFAULT_EMBED_DIM, DEFAULT_SH_DEGREE};
pub use ppm::{decode_ppm, encode_ppm, read_image, write_image, PpmDepth};
pub use projection::{build_covariance, project_gaussian, rotation_from_quaternion, ProjectedGaussian, LOW_PASS};
pub use scene_io::{decode_scene, encode_scene, read_scene, write_scene, SCENE_MAGIC, SCENE_VERSION};

/// View-space depth below which primitives are culled.
pub const Z_NEAR: f64 = 0.01;
/// Componentwise bounds on `exp(log_scale)`.
pub const MIN_SCALE: f64 = 1e-7;
pub const MAX_SCALE: f64 = 1e3;
