use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::scene::mat::{self, Mat3};

/// Pinhole camera with upper-triangular intrinsics and a rigid
/// world-to-camera transform (x right, y down, z forward).
///
/// Pixel centers sit at integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    intrinsics: Mat3<T>,
    rotation: Mat3<T>,
    translation: [T; 3],
    width: usize,
    height: usize,
}

const ROTATION_TOL: f64 = 1e-6;

impl<T: Real> Camera<T> {
    pub fn new(
        intrinsics: Mat3<T>,
        rotation: Mat3<T>,
        translation: [T; 3],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = &intrinsics;
        if k[1][0] != T::zero() || k[2][0] != T::zero() || k[2][1] != T::zero() {
            return Err(Error::Validation("intrinsics must be upper-triangular".into()));
        }
        if k[0][0] <= T::zero() || k[1][1] <= T::zero() {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if k[2][2] != T::one() {
            return Err(Error::Validation("intrinsics K[2][2] must be 1".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        let rtr = mat::mul3(&mat::transpose3(&rotation), &rotation);
        let eye = mat::identity3::<T>();
        for i in 0..3 {
            for j in 0..3 {
                if (rtr[i][j] - eye[i][j]).abs().as_f64() > ROTATION_TOL {
                    return Err(Error::Validation(format!(
                        "rotation is not orthonormal: (R^T R)[{i}][{j}] = {}",
                        rtr[i][j]
                    )));
                }
            }
        }
        let det = mat::det3(&rotation);
        if (det - T::one()).abs().as_f64() > ROTATION_TOL {
            return Err(Error::Validation(format!("rotation must have determinant +1, got {det}")));
        }
        if translation.iter().chain(intrinsics.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("camera has non-finite entries".into()));
        }
        Ok(Self { intrinsics, rotation, translation, width, height })
    }

    /// Camera at `eye` looking at `target` with the given vertical field of
    /// view; the principal point is the image center.
    pub fn look_at(eye: [T; 3], target: [T; 3], up: [T; 3], fov_y: T, width: usize, height: usize) -> Result<Self> {
        let forward = mat::normalize3(mat::sub3(target, eye));
        let right = mat::normalize3(mat::cross3(forward, up));
        let down = mat::cross3(forward, right);
        let rotation = [right, down, forward];
        let t = mat::mul3v(&rotation, eye);
        let translation = [-t[0], -t[1], -t[2]];
        let two = T::lit(2.0);
        let focal = T::lit(height as f64) / (two * (fov_y / two).tan());
        let z = T::zero();
        let intrinsics = [
            [focal, z, T::lit((width as f64 - 1.0) / 2.0)],
            [z, focal, T::lit((height as f64 - 1.0) / 2.0)],
            [z, z, T::one()],
        ];
        Self::new(intrinsics, rotation, translation, width, height)
    }

    pub fn intrinsics(&self) -> &Mat3<T> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Mat3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> [T; 3] {
        self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `P = K [R | t]`.
    pub fn projection_matrix(&self) -> [[T; 4]; 3] {
        let mut p = [[T::zero(); 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = (0..3).map(|k| self.intrinsics[i][k] * self.rotation[k][j]).sum();
            }
            p[i][3] = (0..3).map(|k| self.intrinsics[i][k] * self.translation[k]).sum();
        }
        p
    }

    pub fn world_to_camera(&self, x: [T; 3]) -> [T; 3] {
        let r = mat::mul3v(&self.rotation, x);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> [T; 3] {
        let c = mat::mul3tv(&self.rotation, self.translation);
        [-c[0], -c[1], -c[2]]
    }

    /// Pixel coordinates of a view-space point (division by depth).
    pub fn view_to_pixel(&self, xc: [T; 3]) -> [T; 2] {
        let k = &self.intrinsics;
        let a = xc[0] / xc[2];
        let b = xc[1] / xc[2];
        [k[0][0] * a + k[0][1] * b + k[0][2], k[1][1] * b + k[1][2]]
    }

    /// Chains a gradient on pixel coordinates back to the world position
    /// whose view-space image is `xc`.
    pub fn pixel_grad_to_world(&self, d_pixel: [T; 2], xc: [T; 3]) -> [T; 3] {
        let k = &self.intrinsics;
        let ga = k[0][0] * d_pixel[0];
        let gb = k[0][1] * d_pixel[0] + k[1][1] * d_pixel[1];
        let z = xc[2];
        let d_view = [ga / z, gb / z, -(ga * xc[0] + gb * xc[1]) / (z * z)];
        mat::mul3tv(&self.rotation, d_view)
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let m = |a: &Mat3<T>| a.map(|row| row.map(|v| U::lit(v.as_f64())));
        Camera {
            intrinsics: m(&self.intrinsics),
            rotation: m(&self.rotation),
            translation: self.translation.map(|v| U::lit(v.as_f64())),
            width: self.width,
            height: self.height,
        }
    }
}
