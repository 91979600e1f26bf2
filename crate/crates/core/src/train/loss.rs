//! Reconstruction and uncertainty losses.

use crate::error::{Error, Result};
use crate::scene::{Image, Scene};
use crate::synth::metrics::ssim_with_grad;

/// `(1 - w) L1 + w (1 - SSIM) / 2` and, if requested, its gradient with
/// respect to `rendered` in interleaved RGB layout.
pub fn reconstruction_loss_with_grad(
    rendered: &Image<f64>,
    target: &Image<f64>,
    dssim_weight: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if !rendered.same_shape(target) {
        return Err(Error::Shape(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width(),
            rendered.height(),
            target.width(),
            target.height()
        )));
    }
    let n = rendered.data().len() as f64;
    let l1 = rendered.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let (s, ds) = ssim_with_grad(rendered, target, want_grad)?;
    let loss = (1.0 - dssim_weight) * l1 + dssim_weight * (1.0 - s) / 2.0;
    let grad = ds.map(|ds| {
        rendered
            .data()
            .iter()
            .zip(target.data())
            .zip(ds)
            .map(|((a, b), d)| {
                let sign = if a > b {
                    1.0
                } else if a < b {
                    -1.0
                } else {
                    0.0
                };
                (1.0 - dssim_weight) * sign / n - dssim_weight * d / 2.0
            })
            .collect()
    });
    Ok((loss, grad))
}

pub fn reconstruction_loss(rendered: &Image<f64>, target: &Image<f64>, dssim_weight: f64) -> Result<f64> {
    Ok(reconstruction_loss_with_grad(rendered, target, dssim_weight, false)?.0)
}

/// `-sum_i |sigma_i|`; every `sigma_i` is a softplus and so non-negative.
pub fn uncertainty_reg_loss(scene: &Scene<f64>) -> f64 {
    -scene.gaussians.iter().map(|g| g.opacity_std().abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softplus_inverse;
    use crate::scene::GaussianPrimitive;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_images_cost_nothing() {
        let a = random_image(0, 16, 16);
        assert_eq!(reconstruction_loss(&a, &a, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn l1_term_of_opposite_constants() {
        let one = Image::filled(8, 8, [1.0; 3]);
        let zero = Image::filled(8, 8, [0.0; 3]);
        let l = reconstruction_loss(&one, &zero, 0.0).unwrap();
        assert_eq!(l, 1.0);
        let s = crate::synth::ssim(&one, &zero).unwrap();
        let l = reconstruction_loss(&one, &zero, 0.2).unwrap();
        assert!((l - (0.8 + 0.2 * (1.0 - s) / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_evaluation_and_finite_differences() {
        let a = random_image(1, 16, 16);
        let b = random_image(2, 16, 16);
        let (l, g) = reconstruction_loss_with_grad(&a, &b, 0.2, true).unwrap();
        let l1: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 768.0;
        let direct = 0.8 * l1 + 0.1 * (1.0 - crate::synth::ssim(&a, &b).unwrap());
        assert!((l - direct).abs() < 1e-14);
        let g = g.unwrap();
        let h = 1e-6;
        for i in [0, 17, 300, 767] {
            let mut p = a.clone();
            p.data_mut()[i] += h;
            let mut m = a.clone();
            m.data_mut()[i] -= h;
            let fd =
                (reconstruction_loss(&p, &b, 0.2).unwrap() - reconstruction_loss(&m, &b, 0.2).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            reconstruction_loss(&random_image(0, 8, 8), &random_image(0, 8, 16), 0.2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn uncertainty_term() {
        let mut scene = Scene::new(0, 0).unwrap();
        assert_eq!(uncertainty_reg_loss(&scene), 0.0);
        for s in [0.5, 1.5] {
            let mut g = GaussianPrimitive::new(0, 0);
            g.opacity_std_raw = softplus_inverse(s);
            scene.push(g).unwrap();
        }
        assert!((uncertainty_reg_loss(&scene) + 2.0).abs() < 1e-12);
    }
}
