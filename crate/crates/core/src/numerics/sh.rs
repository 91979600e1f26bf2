//! Real spherical-harmonics basis up to degree 3, using the sign convention
//! and constants of the reference Gaussian-splatting implementation.
//!
//! Coefficients are stored basis-major with interleaved RGB:
//! `coeffs[k * 3 + channel]` for basis function `k`.

use crate::error::{Error, Result};
use crate::numerics::Real;

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for `degree`: `(degree + 1)^2`.
#[inline]
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the basis at `dir` into `out[..(degree+1)^2]`.
pub fn sh_basis<T: Real>(degree: usize, dir: [T; 3], out: &mut [T]) {
    sh_basis_impl(degree, dir, out, None);
}

/// Evaluates the basis and its gradient with respect to the (unnormalized)
/// direction components.
pub fn sh_basis_with_grad<T: Real>(degree: usize, dir: [T; 3], out: &mut [T], grad: &mut [[T; 3]]) {
    sh_basis_impl(degree, dir, out, Some(grad));
}

fn sh_basis_impl<T: Real>(degree: usize, dir: [T; 3], out: &mut [T], mut grad: Option<&mut [[T; 3]]>) {
    debug_assert!(degree <= MAX_SH_DEGREE);
    let [x, y, z] = dir;
    let zero = T::zero();
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    let six = T::lit(6.0);
    let eight = T::lit(8.0);
    let mut set = |k: usize, v: T, g: [T; 3]| {
        out[k] = v;
        if let Some(grad) = grad.as_deref_mut() {
            grad[k] = g;
        }
    };

    set(0, T::lit(SH_C0), [zero; 3]);
    if degree == 0 {
        return;
    }
    let c1 = T::lit(SH_C1);
    set(1, -c1 * y, [zero, -c1, zero]);
    set(2, c1 * z, [zero, zero, c1]);
    set(3, -c1 * x, [-c1, zero, zero]);
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    let c2 = SH_C2.map(T::lit);
    set(4, c2[0] * xy, [c2[0] * y, c2[0] * x, zero]);
    set(5, c2[1] * yz, [zero, c2[1] * z, c2[1] * y]);
    set(6, c2[2] * (two * zz - xx - yy), [-two * c2[2] * x, -two * c2[2] * y, four * c2[2] * z]);
    set(7, c2[3] * xz, [c2[3] * z, zero, c2[3] * x]);
    set(8, c2[4] * (xx - yy), [two * c2[4] * x, -two * c2[4] * y, zero]);
    if degree == 2 {
        return;
    }
    let c3 = SH_C3.map(T::lit);
    set(9, c3[0] * y * (three * xx - yy), [six * c3[0] * xy, c3[0] * (three * xx - three * yy), zero]);
    set(10, c3[1] * xy * z, [c3[1] * yz, c3[1] * xz, c3[1] * xy]);
    set(
        11,
        c3[2] * y * (four * zz - xx - yy),
        [-two * c3[2] * xy, c3[2] * (four * zz - xx - three * yy), eight * c3[2] * yz],
    );
    set(
        12,
        c3[3] * z * (two * zz - three * xx - three * yy),
        [-six * c3[3] * xz, -six * c3[3] * yz, c3[3] * (six * zz - three * xx - three * yy)],
    );
    set(
        13,
        c3[4] * x * (four * zz - xx - yy),
        [c3[4] * (four * zz - three * xx - yy), -two * c3[4] * xy, eight * c3[4] * xz],
    );
    set(14, c3[5] * z * (xx - yy), [two * c3[5] * xz, -two * c3[5] * yz, c3[5] * (xx - yy)]);
    set(15, c3[6] * x * (xx - three * yy), [c3[6] * (three * xx - three * yy), -six * c3[6] * xy, zero]);
}

/// RGB color from SH coefficients for a unit viewing direction.
///
/// The result is linear in `coeffs` and is not clamped.
pub fn sh_evaluate<T: Real>(degree: usize, dir: [T; 3], coeffs: &[T]) -> Result<[T; 3]> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::Shape(format!("SH degree {degree} exceeds {MAX_SH_DEGREE}")));
    }
    let count = sh_coeff_count(degree);
    if coeffs.len() != 3 * count {
        return Err(Error::Shape(format!(
            "expected {} SH coefficients for degree {degree}, got {}",
            3 * count,
            coeffs.len()
        )));
    }
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0));
    if (norm - T::one()).abs() > tol {
        return Err(Error::NumericDomain(format!("SH direction must be unit length, got norm {norm}")));
    }
    let mut basis = [T::zero(); 16];
    sh_basis(degree, dir, &mut basis);
    Ok(combine(&basis[..count], coeffs))
}

/// `sum_k basis[k] * coeffs[k*3 + c]` per channel.
#[inline]
pub(crate) fn combine<T: Real>(basis: &[T], coeffs: &[T]) -> [T; 3] {
    let mut rgb = [T::zero(); 3];
    for (k, &b) in basis.iter().enumerate() {
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += b * coeffs[k * 3 + c];
        }
    }
    rgb
}
