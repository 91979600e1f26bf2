//! Covariance factorization `R S S^T R^T` and its EWA projection
//! `J W Sigma W^T J^T` to screen space, with the matching backward pass.

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::scene::mat::{self, Mat3};
use crate::scene::{Camera, GaussianPrimitive, MAX_SCALE, MIN_SCALE, Z_NEAR};

/// Screen-space variance added to both diagonal entries of the projected
/// covariance (anti-aliasing floor, pixels squared).
pub const LOW_PASS: f64 = 0.3;

/// Rotation matrix of a quaternion `(w, x, y, z)`; the quaternion is
/// normalized first.
pub fn rotation_from_quaternion<T: Real>(q: [T; 4]) -> Mat3<T> {
    let n = q.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let one = T::one();
    let two = T::lit(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// `Sigma = R S S^T R^T` with `S = diag(exp(log_scale))`.
pub fn build_covariance<T: Real>(q: [T; 4], log_scale: [T; 3]) -> Mat3<T> {
    let r = rotation_from_quaternion(q);
    let s = log_scale.map(|v| v.exp().max(T::lit(MIN_SCALE)).min(T::lit(MAX_SCALE)));
    covariance_from_parts(&r, s)
}

fn covariance_from_parts<T: Real>(r: &Mat3<T>, s: [T; 3]) -> Mat3<T> {
    let mut m = *r;
    for row in m.iter_mut() {
        for (v, sk) in row.iter_mut().zip(s) {
            *v *= sk;
        }
    }
    let mut cov = mat::mul3(&m, &mat::transpose3(&m));
    // exact symmetry
    for i in 0..3 {
        for j in 0..i {
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// A Gaussian projected into an image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian<T> {
    pub mean2d: [T; 2],
    pub cov2d: [[T; 2]; 2],
    pub depth: T,
    pub view: [T; 3],
}

impl<T: Real> ProjectedGaussian<T> {
    /// Inverse covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub fn conic(&self) -> [T; 3] {
        let [[a, b], [_, c]] = self.cov2d;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }

    pub fn determinant(&self) -> T {
        let [[a, b], [_, c]] = self.cov2d;
        a * c - b * b
    }
}

/// `J` (2x3) times the camera rotation: maps world-space covariance to
/// screen space.
fn screen_jacobian<T: Real>(cam: &Camera<T>, xc: [T; 3]) -> ([[T; 3]; 2], [[T; 3]; 2]) {
    let k = cam.intrinsics();
    let [x, y, z] = xc;
    let zero = T::zero();
    let jn = [[T::one() / z, zero, -x / (z * z)], [zero, T::one() / z, -y / (z * z)]];
    let mut j = [[zero; 3]; 2];
    for c in 0..3 {
        j[0][c] = k[0][0] * jn[0][c] + k[0][1] * jn[1][c];
        j[1][c] = k[1][1] * jn[1][c];
    }
    let r = cam.rotation();
    let mut t = [[zero; 3]; 2];
    for i in 0..2 {
        for c in 0..3 {
            t[i][c] = j[i][0] * r[0][c] + j[i][1] * r[1][c] + j[i][2] * r[2][c];
        }
    }
    (j, t)
}

/// Projects one Gaussian. Primitives at or behind the near plane yield
/// [`Error::CulledBehindCamera`].
pub fn project_gaussian<T: Real>(g: &GaussianPrimitive<T>, cam: &Camera<T>) -> Result<ProjectedGaussian<T>> {
    let xc = cam.world_to_camera(g.position);
    if xc[2] <= T::lit(Z_NEAR) {
        return Err(Error::CulledBehindCamera { depth: xc[2].as_f64() });
    }
    let sigma = build_covariance(g.rotation, g.log_scale);
    let (_, t) = screen_jacobian(cam, xc);
    let mut cov2d = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = T::zero();
            for a in 0..3 {
                for b in 0..3 {
                    acc += t[i][a] * sigma[a][b] * t[j][b];
                }
            }
            cov2d[i][j] = acc;
        }
    }
    cov2d[1][0] = cov2d[0][1];
    cov2d[0][0] += T::lit(LOW_PASS);
    cov2d[1][1] += T::lit(LOW_PASS);
    Ok(ProjectedGaussian { mean2d: cam.view_to_pixel(xc), cov2d, depth: xc[2], view: xc })
}

/// Gradients of the geometric parameters of one Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct GeometryGrad<T> {
    pub position: [T; 3],
    pub rotation: [T; 4],
    pub log_scale: [T; 3],
}

/// Chains gradients on `mean2d` and on the symmetric `cov2d` entries
/// `(d_a, d_b, d_c)` (off-diagonal counted once) back to position,
/// quaternion and log-scale.
pub(crate) fn project_backward<T: Real>(
    g: &GaussianPrimitive<T>,
    cam: &Camera<T>,
    d_mean2d: [T; 2],
    d_cov: [T; 3],
) -> GeometryGrad<T> {
    let zero = T::zero();
    let two = T::lit(2.0);
    let xc = cam.world_to_camera(g.position);
    let r_q = rotation_from_quaternion(g.rotation);
    let scale_raw = g.log_scale.map(|v| v.exp());
    let s = scale_raw.map(|v| v.max(T::lit(MIN_SCALE)).min(T::lit(MAX_SCALE)));
    let sigma = covariance_from_parts(&r_q, s);
    let (j, t) = screen_jacobian(cam, xc);

    let half_b = d_cov[1] / two;
    let g2 = [[d_cov[0], half_b], [half_b, d_cov[2]]];

    // dL/dSigma = T^T G2 T
    let mut d_sigma = [[zero; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = zero;
            for i in 0..2 {
                for k in 0..2 {
                    acc += t[i][a] * g2[i][k] * t[k][b];
                }
            }
            d_sigma[a][b] = acc;
        }
    }
    // dL/dT = 2 G2 T Sigma
    let mut ts = [[zero; 3]; 2];
    for i in 0..2 {
        for b in 0..3 {
            ts[i][b] = (0..3).map(|a| t[i][a] * sigma[a][b]).sum();
        }
    }
    let mut d_t = [[zero; 3]; 2];
    for i in 0..2 {
        for b in 0..3 {
            d_t[i][b] = two * (0..2).map(|k| g2[i][k] * ts[k][b]).sum::<T>();
        }
    }
    // dL/dJ = dL/dT R^T
    let r = cam.rotation();
    let mut d_j = [[zero; 3]; 2];
    for i in 0..2 {
        for a in 0..3 {
            d_j[i][a] = (0..3).map(|b| d_t[i][b] * r[a][b]).sum();
        }
    }
    let _ = j;
    // dL/dJn = Kp^T dL/dJ
    let k = cam.intrinsics();
    let mut d_jn = [[zero; 3]; 2];
    for c in 0..3 {
        d_jn[0][c] = k[0][0] * d_j[0][c];
        d_jn[1][c] = k[0][1] * d_j[0][c] + k[1][1] * d_j[1][c];
    }
    let [x, y, z] = xc;
    let z2 = z * z;
    let z3 = z2 * z;
    let d_view = [
        -d_jn[0][2] / z2,
        -d_jn[1][2] / z2,
        -(d_jn[0][0] + d_jn[1][1]) / z2 + two * (d_jn[0][2] * x + d_jn[1][2] * y) / z3,
    ];
    let from_cov = mat::mul3tv(r, d_view);
    let from_mean = cam.pixel_grad_to_world(d_mean2d, xc);
    let position = [from_cov[0] + from_mean[0], from_cov[1] + from_mean[1], from_cov[2] + from_mean[2]];

    // Sigma = M M^T with M = R_q S: dL/dM = 2 dSigma M (dSigma symmetric)
    let mut m = r_q;
    for row in m.iter_mut() {
        for (v, sk) in row.iter_mut().zip(s) {
            *v *= sk;
        }
    }
    let mut d_m = [[zero; 3]; 3];
    for a in 0..3 {
        for c in 0..3 {
            d_m[a][c] = two * (0..3).map(|b| d_sigma[a][b] * m[b][c]).sum::<T>();
        }
    }
    let mut log_scale = [zero; 3];
    for c in 0..3 {
        let ds: T = (0..3).map(|a| d_m[a][c] * r_q[a][c]).sum();
        let clamped = scale_raw[c] < T::lit(MIN_SCALE) || scale_raw[c] > T::lit(MAX_SCALE);
        log_scale[c] = if clamped { zero } else { ds * s[c] };
    }
    let mut d_r = [[zero; 3]; 3];
    for a in 0..3 {
        for c in 0..3 {
            d_r[a][c] = d_m[a][c] * s[c];
        }
    }
    GeometryGrad { position, rotation: quaternion_backward(g.rotation, &d_r), log_scale }
}

/// Gradient on an unnormalized quaternion given the gradient on the
/// rotation matrix it produces.
pub(crate) fn quaternion_backward<T: Real>(q: [T; 4], d_r: &Mat3<T>) -> [T; 4] {
    let n = q.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let two = T::lit(2.0);
    let d = d_r;
    let dw = two * (-z * d[0][1] + y * d[0][2] + z * d[1][0] - x * d[1][2] - y * d[2][0] + x * d[2][1]);
    let dx = two
        * (y * d[0][1] + z * d[0][2] + y * d[1][0] - two * x * d[1][1] - w * d[1][2] + z * d[2][0] + w * d[2][1]
            - two * x * d[2][2]);
    let dy = two
        * (-two * y * d[0][0] + x * d[0][1] + w * d[0][2] + x * d[1][0] + z * d[1][2] - w * d[2][0] + z * d[2][1]
            - two * y * d[2][2]);
    let dz = two
        * (-two * z * d[0][0] - w * d[0][1] + x * d[0][2] + w * d[1][0] - two * z * d[1][1]
            + y * d[1][2]
            + x * d[2][0]
            + y * d[2][1]);
    let dq_hat = [dw, dx, dy, dz];
    let unit = [w, x, y, z];
    let dot: T = dq_hat.iter().zip(unit).map(|(a, b)| *a * b).sum();
    [0, 1, 2, 3].map(|i| (dq_hat[i] - unit[i] * dot) / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::mat::is_positive_semidefinite3;
    use proptest::prelude::*;

    fn cam() -> Camera<f64> {
        Camera::look_at([0.5, -0.4, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 0.9, 32, 24).unwrap()
    }

    #[test]
    fn identity_rotation_unit_scale_gives_identity() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(c, mat::identity3());
    }

    #[test]
    fn scale_squares_on_diagonal() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [2.0f64.ln(), 0.0, 0.0]);
        let expect = [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - expect[i][j]).abs() < 1e-12);
            }
        }
    }

    /// Independent oracle: rotation built from axis-angle via Rodrigues,
    /// then `R diag(exp(2s)) R^T` by explicit triple loops.
    fn oracle_covariance(q: [f64; 4], s: [f64; 3]) -> [[f64; 3]; 3] {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let q = q.map(|v| v / n);
        let angle = 2.0 * q[0].clamp(-1.0, 1.0).acos();
        let sin_half = (1.0 - q[0] * q[0]).sqrt();
        let axis = if sin_half < 1e-12 { [1.0, 0.0, 0.0] } else { [q[1] / sin_half, q[2] / sin_half, q[3] / sin_half] };
        let (c, sn) = (angle.cos(), angle.sin());
        let kx = [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]];
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                r[i][j] = c * id + sn * kx[i][j] + (1.0 - c) * axis[i] * axis[j];
            }
        }
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += r[i][k] * (2.0 * s[k]).exp() * r[j][k];
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn covariance_matches_oracle_and_is_psd(
            q in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(-3.0f64..1.5),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-2);
            let c = build_covariance(q, s);
            let o = oracle_covariance(q, s);
            let scale = o.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((c[i][j] - o[i][j]).abs() <= 1e-10 * scale.max(1.0));
                    prop_assert_eq!(c[i][j], c[j][i]);
                }
            }
            prop_assert!(is_positive_semidefinite3(&c, 1e-12 * scale.max(1e-12)));
        }

        #[test]
        fn projected_covariance_is_invertible(
            x in prop::array::uniform3(-1.0f64..1.0),
            q in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(-8.0f64..0.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-2);
            let mut g = GaussianPrimitive::new(0, 0);
            g.position = x;
            g.rotation = q;
            g.log_scale = s;
            let p = project_gaussian(&g, &cam()).unwrap();
            prop_assert!(p.determinant() > 0.0);
            prop_assert!(p.cov2d[0][0] >= LOW_PASS && p.cov2d[1][1] >= LOW_PASS);
        }
    }

    #[test]
    fn fronto_parallel_isotropic_projection() {
        // J Sigma J^T for Sigma = s^2 I at (0,0,z): f^2 s^2 / z^2 on the diagonal.
        let f = 60.0;
        let k = [[f, 0.0, 16.0], [0.0, f, 12.0], [0.0, 0.0, 1.0]];
        let cam = Camera::new(k, mat::identity3(), [0.0; 3], 32, 24).unwrap();
        let sigma = 0.05f64;
        for z in [1.0, 2.5, 7.0] {
            let mut g = GaussianPrimitive::new(0, 0);
            g.position = [0.0, 0.0, z];
            g.log_scale = [sigma.ln(); 3];
            let p = project_gaussian(&g, &cam).unwrap();
            let expect = f * f * sigma * sigma / (z * z) + LOW_PASS;
            assert!((p.cov2d[0][0] - expect).abs() < 1e-12);
            assert!((p.cov2d[1][1] - expect).abs() < 1e-12);
            assert!(p.cov2d[0][1].abs() < 1e-15);
            assert_eq!(p.mean2d, [16.0, 12.0]);
            assert_eq!(p.depth, z);
        }
    }

    #[test]
    fn behind_near_plane_is_culled() {
        let mut g = GaussianPrimitive::<f64>::new(0, 0);
        g.position = [0.0, 0.0, 0.005];
        let cam = Camera::new(mat::identity3(), mat::identity3(), [0.0; 3], 4, 4).unwrap();
        assert!(matches!(project_gaussian(&g, &cam), Err(Error::CulledBehindCamera { .. })));
        g.position = [0.0, 0.0, -1.0];
        assert!(project_gaussian(&g, &cam).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cam = cam();
        let mut g = GaussianPrimitive::<f64>::new(0, 0);
        g.position = [0.2, -0.3, 0.4];
        g.rotation = [0.8, 0.3, -0.4, 0.2];
        g.log_scale = [-1.5, -2.0, -1.2];
        let wm = [0.7, -0.4];
        let wc = [1.3, -0.6, 0.9];
        let loss = |g: &GaussianPrimitive<f64>| {
            let p = project_gaussian(g, &cam).unwrap();
            wm[0] * p.mean2d[0]
                + wm[1] * p.mean2d[1]
                + wc[0] * p.cov2d[0][0]
                + wc[1] * p.cov2d[0][1]
                + wc[2] * p.cov2d[1][1]
        };
        let grad = project_backward(&g, &cam, wm, wc);
        let h = 1e-6;
        let check = |analytic: f64, f: &dyn Fn(&mut GaussianPrimitive<f64>, f64)| {
            let mut gp = g.clone();
            f(&mut gp, h);
            let mut gm = g.clone();
            f(&mut gm, -h);
            let fd = (loss(&gp) - loss(&gm)) / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-5 * fd.abs().max(1.0), "fd {fd} analytic {analytic}");
        };
        for a in 0..3 {
            check(grad.position[a], &|g, d| g.position[a] += d);
            check(grad.log_scale[a], &|g, d| g.log_scale[a] += d);
        }
        for a in 0..4 {
            check(grad.rotation[a], &|g, d| g.rotation[a] += d);
        }
    }
}
