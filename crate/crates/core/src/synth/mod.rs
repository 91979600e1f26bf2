//! Synthetic multi-style datasets and image metrics.
//!
//! A dataset is one ground-truth scene seen from a ring of cameras. Every
//! view is rendered once and then restyled `M + 1` times: style 0 is the
//! unmodified render, the others apply a per-channel gain and bias. Training
//! images additionally carry a smooth per-view multiplicative jitter, which
//! models restorations that disagree across views.

mod dataset;
pub mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::sh::SH_C0;
use crate::numerics::{logit, sh_coeff_count};
use crate::render::{render, ColorSource, RenderMode};
use crate::scene::{Camera, GaussianPrimitive, Image, Scene};

pub use dataset::{make_dataset, Split, SynthDataset, SynthSpec};
pub use metrics::{psnr, ssim, PSNR_IDENTICAL};

/// Opacity std pre-activation of generated Gaussians (`sigma` about 3e-4).
const GT_OPACITY_STD_RAW: f64 = -8.0;
/// Fraction of pixels that must reach alpha 0.1 in every ring view.
pub const MIN_COVERAGE: f64 = 0.5;
const MAX_SCENE_ATTEMPTS: u64 = 64;
/// Vertical field of view of the ring cameras (radians).
pub const RING_FOV: f64 = 0.8;
/// Ring radius as a multiple of the scene extent.
pub const RING_RADIUS: f64 = 3.0;

/// `n` cameras on a ring around the origin looking inward, with a gentle
/// elevation wave. `phase` rotates the whole ring (in units of one step).
pub fn ring_cameras(n: usize, width: usize, height: usize, extent: f64, phase: f64) -> Result<Vec<Camera<f64>>> {
    (0..n)
        .map(|k| {
            let theta = 2.0 * PI * (k as f64 + phase) / n as f64;
            let elevation = 0.35 * (3.0 * theta).sin();
            let r = RING_RADIUS * extent;
            let eye = [r * theta.cos() * elevation.cos(), r * elevation.sin(), r * theta.sin() * elevation.cos()];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], RING_FOV, width, height)
        })
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

fn sample_scene(
    count: usize,
    extent: f64,
    sh_degree: usize,
    embed_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Scene<f64>> {
    let mut scene = Scene::new(sh_degree, embed_dim)?;
    let (lo, hi) = ((0.06 * extent).ln(), (0.2 * extent).ln());
    for _ in 0..count {
        let mut g = GaussianPrimitive::new(sh_degree, embed_dim);
        g.position = std::array::from_fn(|_| rng.random_range(-extent..extent));
        g.rotation = random_rotation(rng);
        g.log_scale = std::array::from_fn(|_| rng.random_range(lo..hi));
        g.opacity_mean = logit(rng.random_range(0.5..0.95));
        g.opacity_std_raw = GT_OPACITY_STD_RAW;
        for c in 0..3 {
            g.sh[c] = rng.random_range(0.1..0.9) / SH_C0;
        }
        scene.push(g)?;
    }
    Ok(scene)
}

/// Fraction of pixels with alpha above 0.1, minimized over `cameras`.
pub fn min_coverage(scene: &Scene<f64>, cameras: &[Camera<f64>]) -> Result<f64> {
    let coeffs = scene.sh_coefficients();
    let mut worst = 1.0f64;
    for cam in cameras {
        let out = render(scene, cam, ColorSource::Sh(&coeffs), RenderMode::DeterministicMean, [0.0; 3])?;
        let covered = out.alpha.iter().filter(|a| **a > 0.1).count();
        worst = worst.min(covered as f64 / out.alpha.len() as f64);
    }
    Ok(worst)
}

/// Random ground-truth scene: positions in the cube `[-extent, extent]^3`,
/// log-uniform scales, opacity in `[0.5, 0.95]` and a random DC color.
/// Resamples until every camera in `cameras` reaches [`MIN_COVERAGE`].
pub fn make_scene(
    count: usize,
    extent: f64,
    sh_degree: usize,
    embed_dim: usize,
    seed: u64,
    cameras: &[Camera<f64>],
) -> Result<Scene<f64>> {
    if count == 0 {
        return Err(Error::Validation("scene needs at least one gaussian".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_SCENE_ATTEMPTS {
        let scene = sample_scene(count, extent, sh_degree, embed_dim, &mut rng)?;
        if min_coverage(&scene, cameras)? >= MIN_COVERAGE {
            return Ok(scene);
        }
    }
    Err(Error::Validation(format!(
        "no scene of {count} gaussians reached {MIN_COVERAGE} coverage in {MAX_SCENE_ATTEMPTS} attempts"
    )))
}

/// Small random scene in front of a single camera, for oracle and gradient
/// tests: random rotations, scales, opacities, `sigma` and SH coefficients.
pub fn random_scene(
    seed: u64,
    count: usize,
    sh_degree: usize,
    width: usize,
    height: usize,
) -> Result<(Scene<f64>, Camera<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eye = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -3.0];
    let cam = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 0.7, width, height)?;
    let mut scene = Scene::new(sh_degree, 0)?;
    for _ in 0..count {
        let mut g = GaussianPrimitive::new(sh_degree, 0);
        g.position = [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)];
        g.rotation = random_rotation(&mut rng);
        g.log_scale = std::array::from_fn(|_| rng.random_range(-2.8..-1.2));
        g.opacity_mean = rng.random_range(-1.5..2.5);
        g.opacity_std_raw = rng.random_range(-2.0..1.0);
        for (k, v) in g.sh.iter_mut().enumerate() {
            *v = if k < 3 { rng.random_range(0.0..2.5) } else { rng.random_range(-0.3..0.3) };
        }
        scene.push(g)?;
    }
    debug_assert_eq!(scene.sh_len(), 3 * sh_coeff_count(sh_degree));
    Ok((scene, cam))
}

/// Per-channel affine restyling plus an optional smooth jitter field.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTransform {
    pub style_id: usize,
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    /// Amplitude of the multiplicative per-view jitter.
    pub jitter: f64,
}

impl StyleTransform {
    pub fn identity() -> Self {
        Self { style_id: 0, gain: [1.0; 3], bias: [0.0; 3], jitter: 0.0 }
    }

    /// `clamp((gain * x + bias) * (1 + jitter * f))` where `f` is a smooth
    /// field in `[-1, 1]` drawn from `rng`; `with_jitter = false` drops `f`.
    pub fn apply(&self, image: &Image<f64>, rng: &mut ChaCha8Rng, with_jitter: bool) -> Image<f64> {
        let (w, h) = (image.width(), image.height());
        let mut waves = [[0.0; 6]; 3];
        for wave in waves.iter_mut() {
            for (i, v) in wave.iter_mut().enumerate() {
                *v = if i % 3 == 2 { rng.random_range(0.0..2.0 * PI) } else { rng.random_range(-1.0..1.0) };
            }
        }
        let amp = if with_jitter { self.jitter } else { 0.0 };
        let mut out = image.clone();
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                let px = image.pixel(x, y);
                let rgb = std::array::from_fn(|c| {
                    let wv = &waves[c];
                    let f = 0.5 * (2.0 * PI * (wv[0] * u + wv[1] * v) + wv[2]).cos()
                        + 0.5 * (2.0 * PI * (wv[3] * u + wv[4] * v) + wv[5]).cos();
                    ((self.gain[c] * px[c] + self.bias[c]) * (1.0 + amp * f)).clamp(0.0, 1.0)
                });
                out.set_pixel(x, y, rgb);
            }
        }
        out
    }
}

/// Style 0 is the identity; styles `1..=m` draw gains in `[0.7, 1.3]` and
/// biases in `[-0.05, 0.05]`, rejecting gain vectors closer than 0.15 (max
/// norm) to an earlier style.
pub fn make_styles(m: usize, jitter: f64, seed: u64) -> Vec<StyleTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut styles = vec![StyleTransform::identity()];
    while styles.len() <= m {
        let gain: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.3));
        let far = styles.iter().all(|s| (0..3).map(|c| (s.gain[c] - gain[c]).abs()).fold(0.0, f64::max) >= 0.15);
        if !far {
            continue;
        }
        styles.push(StyleTransform {
            style_id: styles.len(),
            gain,
            bias: std::array::from_fn(|_| rng.random_range(-0.05..0.05)),
            jitter,
        });
    }
    styles
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_cameras_look_at_origin() {
        for cam in ring_cameras(8, 32, 32, 1.0, 0.0).unwrap() {
            let px = cam.view_to_pixel(cam.world_to_camera([0.0; 3]));
            assert!((px[0] - 15.5).abs() < 1e-9 && (px[1] - 15.5).abs() < 1e-9);
        }
    }

    #[test]
    fn styles_are_deterministic_and_start_with_identity() {
        let a = make_styles(3, 0.1, 5);
        assert_eq!(a, make_styles(3, 0.1, 5));
        assert_eq!(a.len(), 4);
        assert_eq!(a[0], StyleTransform::identity());
        assert!(a.iter().all(|s| s.gain.iter().all(|g| *g > 0.0)));
    }

    #[test]
    fn identity_style_preserves_image() {
        let img = Image::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(StyleTransform::identity().apply(&img, &mut rng, true), img);
    }

    #[test]
    fn make_scene_respects_count_seed_and_coverage() {
        let cams = ring_cameras(6, 32, 32, 1.0, 0.0).unwrap();
        let a = make_scene(120, 1.0, 1, 2, 9, &cams).unwrap();
        assert_eq!(a.len(), 120);
        assert_eq!(a, make_scene(120, 1.0, 1, 2, 9, &cams).unwrap());
        assert!(min_coverage(&a, &cams).unwrap() >= MIN_COVERAGE);
        for g in &a.gaussians {
            let o = crate::numerics::sigmoid(g.opacity_mean);
            assert!((0.5..=0.95).contains(&o));
        }
        assert!(make_scene(0, 1.0, 1, 2, 9, &cams).is_err());
    }
}
