//! PSNR and SSIM on `[0, 1]` RGB images.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) applied as a zero-padded
//! "same" convolution per channel, with `C1 = 0.01^2` and `C2 = 0.03^2`; the
//! score is the mean of the SSIM map over pixels and channels.

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::scene::Image;

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shapes<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!("image shapes differ: {}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height())))
    }
}

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)`; [`PSNR_IDENTICAL`] when the images are equal.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_IDENTICAL } else { -10.0 * m.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable zero-padded "same" filtering of one `w x h` plane.
fn blur(plane: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += wk * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += wk * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel<T: Real>(img: &Image<T>, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).map(|v| v.as_f64()).collect()
}

/// Mean SSIM and, when requested, its gradient with respect to `a`
/// (interleaved RGB like the image data).
pub fn ssim_with_grad<T: Real>(a: &Image<T>, b: &Image<T>, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    let win = gaussian_window();
    let count = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur(&x, w, h, &win);
        let my = blur(&y, w, h, &win);
        let sxx = blur(&xx, w, h, &win);
        let syy = blur(&yy, w, h, &win);
        let sxy = blur(&xy, w, h, &win);
        let mut g_mx = vec![0.0; w * h];
        let mut g_sxx = vec![0.0; w * h];
        let mut g_sxy = vec![0.0; w * h];
        for p in 0..w * h {
            let a1 = 2.0 * mx[p] * my[p] + SSIM_C1;
            let a2 = 2.0 * (sxy[p] - mx[p] * my[p]) + SSIM_C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + SSIM_C1;
            let b2 = (sxx[p] - mx[p] * mx[p]) + (syy[p] - my[p] * my[p]) + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            if want_grad {
                let d = 1.0 / count;
                let bb = b1 * b2;
                g_mx[p] =
                    d * ((2.0 * my[p] * a2 - 2.0 * my[p] * a1) / bb - s * 2.0 * mx[p] / b1 + s * 2.0 * mx[p] / b2);
                g_sxx[p] = -d * s / b2;
                g_sxy[p] = d * 2.0 * a1 / bb;
            }
        }
        if let Some(grad) = grad.as_mut() {
            // the symmetric zero-padded window is its own adjoint
            let bx = blur(&g_mx, w, h, &win);
            let bxx = blur(&g_sxx, w, h, &win);
            let bxy = blur(&g_sxy, w, h, &win);
            for p in 0..w * h {
                grad[p * 3 + c] = bx[p] + 2.0 * x[p] * bxx[p] + y[p] * bxy[p];
            }
        }
    }
    Ok((total / count, grad))
}

pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    /// Direct 2D windowed sums, no separability.
    fn ssim_oracle(a: &Image<f64>, b: &Image<f64>) -> f64 {
        let (w, h) = (a.width() as isize, a.height() as isize);
        let mut win = [[0.0; 11]; 11];
        let mut s = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11isize {
                        for j in 0..11isize {
                            let (yy, xx) = (y + i - 5, x + j - 5);
                            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                                continue;
                            }
                            let k = win[i as usize][j as usize] / s;
                            let p = a.pixel(xx as usize, yy as usize)[c];
                            let q = b.pixel(xx as usize, yy as usize)[c];
                            mx += k * p;
                            my += k * q;
                            sxx += k * p * p;
                            syy += k * q * q;
                            sxy += k * p * q;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cov = sxy - mx * my;
                    total += (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / (w * h * 3) as f64
    }

    #[test]
    fn identical_images() {
        let a = random_image(1, 13, 9);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn black_versus_white_is_zero_db() {
        let a = Image::filled(4, 4, [0.0f64; 3]);
        let b = Image::filled(4, 4, [1.0f64; 3]);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn psnr_is_symmetric_and_matches_direct_formula() {
        let a = random_image(2, 16, 16);
        let b = random_image(3, 16, 16);
        let direct = {
            let m: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 768.0;
            10.0 * (1.0 / m).log10()
        };
        assert!((psnr(&a, &b).unwrap() - direct).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        let a = random_image(4, 16, 16);
        let b = random_image(5, 16, 16);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random_image(6, 12, 10);
        let b = random_image(7, 12, 10);
        let (_, g) = ssim_with_grad(&a, &b, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for idx in [0, 5, 77, 200, 359] {
            let mut p = a.clone();
            p.data_mut()[idx] += h;
            let mut m = a.clone();
            m.data_mut()[idx] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-6 * fd.abs().max(1e-3), "{idx}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = random_image(1, 4, 4);
        let b = random_image(1, 4, 5);
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(ssim(&a, &b), Err(Error::Shape(_))));
    }
}
