//! Brute-force renderer: every Gaussian is tested at every pixel, each pixel
//! sorts its own contributors, and compositing never stops early.

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::render::{gaussian_colors, gaussian_opacities, ColorSource, RenderMode, RenderOutput, MAX_BLEND, MIN_BLEND};
use crate::scene::{project_gaussian, Camera, Image, Scene};

pub fn render_reference<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    colors: ColorSource<'_, T>,
    mode: RenderMode,
    background: [T; 3],
) -> Result<RenderOutput<T>> {
    let (w, h) = (cam.width(), cam.height());
    let rgb = gaussian_colors(scene, cam, colors)?;
    let (opacity, _) = gaussian_opacities(scene, mode);
    let mut visible = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        match project_gaussian(g, cam) {
            Ok(p) => visible.push((i, p)),
            Err(Error::CulledBehindCamera { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let mut color = vec![T::zero(); w * h * 3];
    let mut composited = vec![T::zero(); w * h * 3];
    let mut alpha = vec![T::zero(); w * h];
    let mut contrib = vec![0u32; w * h];
    let mut hits: Vec<(T, usize, T)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            hits.clear();
            for (i, p) in &visible {
                let [[a, b], [_, c]] = p.cov2d;
                let det = a * c - b * b;
                let dx = T::lit(x as f64) - p.mean2d[0];
                let dy = T::lit(y as f64) - p.mean2d[1];
                // d^T Sigma^-1 d via the adjugate
                let maha = (c * dx * dx - T::lit(2.0) * b * dx * dy + a * dy * dy) / det;
                let weight = (opacity[*i] * (-maha / T::lit(2.0)).exp()).min(T::lit(MAX_BLEND));
                if weight >= T::lit(MIN_BLEND) {
                    hits.push((p.depth, *i, weight));
                }
            }
            hits.sort_by(|l, r| l.0.partial_cmp(&r.0).unwrap().then(l.1.cmp(&r.1)));
            let p = y * w + x;
            let mut t = T::one();
            for &(_, i, weight) in &hits {
                for k in 0..3 {
                    color[p * 3 + k] += rgb[i][k] * weight * t;
                }
                t *= T::one() - weight;
            }
            contrib[p] = hits.len() as u32;
            alpha[p] = T::one() - t;
            for k in 0..3 {
                composited[p * 3 + k] = color[p * 3 + k] + t * background[k];
            }
        }
    }
    Ok(RenderOutput {
        color: Image::new(w, h, color)?,
        alpha,
        contrib_count: contrib,
        composited: Image::new(w, h, composited)?,
    })
}
