//! Front-to-back alpha compositing of projected Gaussians, its backward
//! pass, and a brute-force reference renderer.

mod opacity;
mod reference;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::sh::{combine, sh_basis, sh_basis_with_grad};
use crate::numerics::{scalar, Real};
use crate::scene::projection::project_backward;
use crate::scene::{mat, project_gaussian, Camera, Image, ProjectedGaussian, Scene};

pub use opacity::{opacity_expected, opacity_expected_grad, opacity_monte_carlo, opacity_train, opacity_train_grad};
pub use reference::render_reference;

/// Upper bound on a single blend weight.
pub const MAX_BLEND: f64 = 0.99;
/// Blend weights below this are skipped.
pub const MIN_BLEND: f64 = 1.0 / 255.0;
/// Traversal stops once transmittance would drop below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// How per-Gaussian opacity is obtained from `(mu, sigma)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// `S(mu + sigma * eps)` with one standard normal `eps` per Gaussian,
    /// drawn in index order from a ChaCha8 stream seeded with `seed`.
    TrainStochastic { seed: u64 },
    /// `S(mu / sqrt(1 + pi sigma^2 / 8))`.
    InferenceExpected,
    /// `S(mu)`.
    DeterministicMean,
}

/// Per-Gaussian color input.
#[derive(Clone, Copy, Debug)]
pub enum ColorSource<'a, T> {
    /// One RGB triple per Gaussian.
    Rgb(&'a [[T; 3]]),
    /// SH coefficients of the scene's degree, `3 (D+1)^2` per Gaussian,
    /// evaluated toward the camera center.
    Sh(&'a [T]),
}

/// Rendered image.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    /// Accumulated color without background.
    pub color: Image<T>,
    /// Accumulated opacity `1 - T_final` per pixel.
    pub alpha: Vec<T>,
    /// Number of Gaussians blended per pixel.
    pub contrib_count: Vec<u32>,
    /// `color + (1 - alpha) * background`.
    pub composited: Image<T>,
}

#[derive(Clone, Copy, Debug)]
struct BlendEntry<T> {
    index: u32,
    weight: T,
    falloff: T,
    clamped: bool,
}

/// Per-pixel blend lists recorded by [`render_traced`] for the backward pass.
#[derive(Clone, Debug)]
pub struct RenderTrace<T> {
    mode: RenderMode,
    width: usize,
    height: usize,
    background: [T; 3],
    noise: Vec<f64>,
    opacity: Vec<T>,
    colors: Vec<[T; 3]>,
    projected: Vec<Option<ProjectedGaussian<T>>>,
    conics: Vec<[T; 3]>,
    offsets: Vec<usize>,
    entries: Vec<BlendEntry<T>>,
    final_transmittance: Vec<T>,
}

impl<T: Real> RenderTrace<T> {
    pub fn mode(&self) -> RenderMode {
        self.mode
    }

    /// Standard normal samples used for the opacity (empty unless stochastic).
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    /// Per-Gaussian opacity used in this render.
    pub fn opacity(&self) -> &[T] {
        &self.opacity
    }

    /// Gaussian indices blended at a pixel, front to back.
    pub fn blend_list(&self, x: usize, y: usize) -> impl Iterator<Item = usize> + '_ {
        let p = y * self.width + x;
        self.entries[self.offsets[p]..self.offsets[p + 1]].iter().map(|e| e.index as usize)
    }

    /// Every `(pixel, gaussian, clamped)` blend entry in pixel order. Two
    /// renders with equal active sets lie on the same smooth piece of the
    /// renderer.
    pub fn active_set(&self) -> Vec<(u32, u32, bool)> {
        let mut out = Vec::with_capacity(self.entries.len());
        for p in 0..self.width * self.height {
            for e in &self.entries[self.offsets[p]..self.offsets[p + 1]] {
                out.push((p as u32, e.index, e.clamped));
            }
        }
        out
    }

    /// Transmittance before each blended Gaussian at a pixel, plus the final
    /// value.
    pub fn transmittance_profile(&self, x: usize, y: usize) -> Vec<T> {
        let p = y * self.width + x;
        let mut t = T::one();
        let mut out = vec![t];
        for e in &self.entries[self.offsets[p]..self.offsets[p + 1]] {
            t *= T::one() - e.weight;
            out.push(t);
        }
        out
    }
}

/// Upstream gradients of a scalar loss with respect to the render outputs.
#[derive(Clone, Copy, Debug)]
pub struct Upstream<'a, T> {
    /// `dL / d composited`, `H * W * 3`.
    pub color: &'a [T],
    /// `dL / d alpha`, `H * W`.
    pub alpha: Option<&'a [T]>,
}

/// Parameter gradients from [`render_backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrads<T> {
    pub position: Vec<[T; 3]>,
    pub rotation: Vec<[T; 4]>,
    pub log_scale: Vec<[T; 3]>,
    pub opacity_mean: Vec<T>,
    pub opacity_std_raw: Vec<T>,
    /// Same layout as the [`ColorSource`] passed to the forward pass.
    pub colors: Vec<T>,
    /// Gradient on each projected mean in pixels.
    pub mean2d: Vec<[T; 2]>,
}

impl<T: Real> RenderGrads<T> {
    fn zeros(n: usize, color_len: usize) -> Self {
        Self {
            position: vec![[T::zero(); 3]; n],
            rotation: vec![[T::zero(); 4]; n],
            log_scale: vec![[T::zero(); 3]; n],
            opacity_mean: vec![T::zero(); n],
            opacity_std_raw: vec![T::zero(); n],
            colors: vec![T::zero(); color_len],
            mean2d: vec![[T::zero(); 2]; n],
        }
    }
}

/// Standard normal opacity noise for `n` Gaussians.
pub fn opacity_noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Per-Gaussian opacity under `mode`; also returns the noise used.
pub fn gaussian_opacities<T: Real>(scene: &Scene<T>, mode: RenderMode) -> (Vec<T>, Vec<f64>) {
    match mode {
        RenderMode::TrainStochastic { seed } => {
            let noise = opacity_noise(seed, scene.len());
            let alpha = scene
                .gaussians
                .iter()
                .zip(&noise)
                .map(|(g, e)| opacity_train(g.opacity_mean, g.opacity_std(), T::lit(*e)))
                .collect();
            (alpha, noise)
        }
        RenderMode::InferenceExpected => {
            (scene.gaussians.iter().map(|g| opacity_expected(g.opacity_mean, g.opacity_std())).collect(), Vec::new())
        }
        RenderMode::DeterministicMean => {
            (scene.gaussians.iter().map(|g| scalar::sigmoid(g.opacity_mean)).collect(), Vec::new())
        }
    }
}

fn view_direction<T: Real>(position: [T; 3], center: [T; 3]) -> ([T; 3], T) {
    let v = mat::sub3(position, center);
    let n = mat::norm3(v);
    if n > T::zero() {
        (v.map(|c| c / n), n)
    } else {
        ([T::zero(), T::zero(), T::one()], T::zero())
    }
}

/// Per-Gaussian RGB for this camera.
pub(crate) fn gaussian_colors<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    colors: ColorSource<'_, T>,
) -> Result<Vec<[T; 3]>> {
    match colors {
        ColorSource::Rgb(rgb) => {
            if rgb.len() != scene.len() {
                return Err(Error::Shape(format!("expected {} colors, got {}", scene.len(), rgb.len())));
            }
            Ok(rgb.to_vec())
        }
        ColorSource::Sh(coeffs) => {
            let len = scene.sh_len();
            if coeffs.len() != len * scene.len() {
                return Err(Error::Shape(format!(
                    "expected {} SH coefficients, got {}",
                    len * scene.len(),
                    coeffs.len()
                )));
            }
            let center = cam.center();
            let count = len / 3;
            let mut basis = [T::zero(); 16];
            Ok(scene
                .gaussians
                .iter()
                .zip(coeffs.chunks_exact(len))
                .map(|(g, c)| {
                    let (dir, _) = view_direction(g.position, center);
                    sh_basis(scene.sh_degree(), dir, &mut basis);
                    combine(&basis[..count], c)
                })
                .collect())
        }
    }
}

fn color_len<T: Real>(scene: &Scene<T>, colors: ColorSource<'_, T>) -> usize {
    match colors {
        ColorSource::Rgb(_) => 3 * scene.len(),
        ColorSource::Sh(_) => scene.sh_len() * scene.len(),
    }
}

/// `-1/2 d^T conic d` for `d = pixel - mean`.
#[inline]
fn falloff_power<T: Real>(conic: [T; 3], dx: T, dy: T) -> T {
    -T::lit(0.5) * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy
}

/// Renders `scene` from `cam`.
pub fn render<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    colors: ColorSource<'_, T>,
    mode: RenderMode,
    background: [T; 3],
) -> Result<RenderOutput<T>> {
    Ok(render_traced(scene, cam, colors, mode, background)?.0)
}

/// Renders and records the blend lists needed by [`render_backward`].
pub fn render_traced<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    colors: ColorSource<'_, T>,
    mode: RenderMode,
    background: [T; 3],
) -> Result<(RenderOutput<T>, RenderTrace<T>)> {
    let (w, h) = (cam.width(), cam.height());
    let rgb = gaussian_colors(scene, cam, colors)?;
    let (opacity, noise) = gaussian_opacities(scene, mode);
    let projected: Vec<Option<ProjectedGaussian<T>>> = scene
        .gaussians
        .iter()
        .map(|g| match project_gaussian(g, cam) {
            Ok(p) => Ok(Some(p)),
            Err(Error::CulledBehindCamera { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..scene.len()).filter(|&i| projected[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (projected[a].unwrap().depth, projected[b].unwrap().depth);
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });

    // Pixel rectangle covering the region where the blend weight can reach
    // MIN_BLEND: d^T conic d <= 2 ln(alpha / MIN_BLEND).
    let mut conics = vec![[T::zero(); 3]; scene.len()];
    let mut rects: Vec<(usize, [usize; 4])> = Vec::with_capacity(order.len());
    for &i in &order {
        let p = projected[i].unwrap();
        let det = p.determinant();
        assert!(det > T::zero(), "projected covariance must be invertible");
        conics[i] = p.conic();
        let level = opacity[i] / T::lit(MIN_BLEND);
        if !(level > T::one()) {
            continue;
        }
        let r2 = T::lit(2.0) * level.ln();
        let ex = (r2 * p.cov2d[0][0]).sqrt() + T::one();
        let ey = (r2 * p.cov2d[1][1]).sqrt() + T::one();
        let x0 = (p.mean2d[0] - ex).ceil().max(T::zero());
        let x1 = (p.mean2d[0] + ex).floor().min(T::lit((w - 1) as f64));
        let y0 = (p.mean2d[1] - ey).ceil().max(T::zero());
        let y1 = (p.mean2d[1] + ey).floor().min(T::lit((h - 1) as f64));
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let r = [x0, x1, y0, y1].map(|v| v.to_usize().unwrap());
        rects.push((i, r));
    }

    // Candidate lists in depth order, CSR layout.
    let mut counts = vec![0usize; w * h + 1];
    for (_, [x0, x1, y0, y1]) in &rects {
        for y in *y0..=*y1 {
            for x in *x0..=*x1 {
                counts[y * w + x + 1] += 1;
            }
        }
    }
    for p in 0..w * h {
        counts[p + 1] += counts[p];
    }
    let mut cursor = counts.clone();
    let mut candidates = vec![0u32; counts[w * h]];
    for (i, [x0, x1, y0, y1]) in &rects {
        for y in *y0..=*y1 {
            for x in *x0..=*x1 {
                let p = y * w + x;
                candidates[cursor[p]] = *i as u32;
                cursor[p] += 1;
            }
        }
    }

    let mut color = vec![T::zero(); w * h * 3];
    let mut alpha = vec![T::zero(); w * h];
    let mut contrib = vec![0u32; w * h];
    let mut final_t = vec![T::one(); w * h];
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut entries = Vec::new();
    let (max_blend, min_blend, min_t) = (T::lit(MAX_BLEND), T::lit(MIN_BLEND), T::lit(MIN_TRANSMITTANCE));
    offsets.push(0);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut t = T::one();
            let mut acc = [T::zero(); 3];
            for &i in &candidates[counts[p]..counts[p + 1]] {
                let i = i as usize;
                let m = projected[i].unwrap().mean2d;
                let power = falloff_power(conics[i], T::lit(x as f64) - m[0], T::lit(y as f64) - m[1]);
                if power > T::zero() {
                    continue;
                }
                let g = power.exp();
                let raw = opacity[i] * g;
                let a = raw.min(max_blend);
                if a < min_blend {
                    continue;
                }
                let next_t = t * (T::one() - a);
                if next_t < min_t {
                    break;
                }
                for c in 0..3 {
                    acc[c] += rgb[i][c] * a * t;
                }
                entries.push(BlendEntry { index: i as u32, weight: a, falloff: g, clamped: raw > max_blend });
                t = next_t;
                contrib[p] += 1;
            }
            offsets.push(entries.len());
            color[p * 3..p * 3 + 3].copy_from_slice(&acc);
            alpha[p] = T::one() - t;
            final_t[p] = t;
        }
    }
    let composited: Vec<T> =
        color.chunks_exact(3).zip(&final_t).flat_map(|(c, t)| [0, 1, 2].map(|k| c[k] + *t * background[k])).collect();
    let out = RenderOutput {
        color: Image::new(w, h, color)?,
        alpha,
        contrib_count: contrib,
        composited: Image::new(w, h, composited)?,
    };
    let trace = RenderTrace {
        mode,
        width: w,
        height: h,
        background,
        noise,
        opacity,
        colors: rgb,
        projected,
        conics,
        offsets,
        entries,
        final_transmittance: final_t,
    };
    Ok((out, trace))
}

/// Backpropagates `upstream` through a traced render.
///
/// `scene`, `cam`, `colors` and `mode` must be those of the forward pass; a
/// different mode or a resized scene is a contract error.
pub fn render_backward<T: Real>(
    trace: &RenderTrace<T>,
    scene: &Scene<T>,
    cam: &Camera<T>,
    colors: ColorSource<'_, T>,
    mode: RenderMode,
    upstream: Upstream<'_, T>,
) -> Result<RenderGrads<T>> {
    if mode != trace.mode {
        return Err(Error::Contract(format!("backward mode {mode:?} differs from forward mode {:?}", trace.mode)));
    }
    let n = scene.len();
    if n != trace.opacity.len() || cam.width() != trace.width || cam.height() != trace.height {
        return Err(Error::Contract("scene or camera differs from the traced forward pass".into()));
    }
    let pixels = trace.width * trace.height;
    if upstream.color.len() != pixels * 3 || upstream.alpha.is_some_and(|a| a.len() != pixels) {
        return Err(Error::Shape("upstream gradient does not match the image size".into()));
    }
    if matches!(colors, ColorSource::Rgb(c) if c.len() != n)
        || matches!(colors, ColorSource::Sh(c) if c.len() != n * scene.sh_len())
    {
        return Err(Error::Contract("color source differs from the traced forward pass".into()));
    }

    let mut d_rgb = vec![[T::zero(); 3]; n];
    let mut d_opacity = vec![T::zero(); n];
    let mut d_mean = vec![[T::zero(); 2]; n];
    let mut d_conic = vec![[T::zero(); 3]; n];
    let zero = T::zero();
    for p in 0..pixels {
        let list = &trace.entries[trace.offsets[p]..trace.offsets[p + 1]];
        let dc = [upstream.color[p * 3], upstream.color[p * 3 + 1], upstream.color[p * 3 + 2]];
        let da_out = upstream.alpha.map_or(zero, |a| a[p]);
        if list.is_empty() || (dc.iter().all(|v| *v == zero) && da_out == zero) {
            continue;
        }
        let t_final = trace.final_transmittance[p];
        let mut rest = trace.background.map(|b| b * t_final);
        let mut t_after = t_final;
        let (x, y) = (T::lit((p % trace.width) as f64), T::lit((p / trace.width) as f64));
        for e in list.iter().rev() {
            let i = e.index as usize;
            let one_minus = T::one() - e.weight;
            let t_i = t_after / one_minus;
            let c = trace.colors[i];
            let mut d_weight = da_out * t_final / one_minus;
            for k in 0..3 {
                d_rgb[i][k] += dc[k] * e.weight * t_i;
                d_weight += dc[k] * (c[k] * t_i - rest[k] / one_minus);
                rest[k] += c[k] * e.weight * t_i;
            }
            t_after = t_i;
            if e.clamped {
                continue;
            }
            d_opacity[i] += d_weight * e.falloff;
            let d_power = d_weight * e.weight;
            let m = trace.projected[i].unwrap().mean2d;
            let (dx, dy) = (x - m[0], y - m[1]);
            let q = trace.conics[i];
            d_mean[i][0] += d_power * (q[0] * dx + q[1] * dy);
            d_mean[i][1] += d_power * (q[1] * dx + q[2] * dy);
            d_conic[i][0] -= d_power * dx * dx / T::lit(2.0);
            d_conic[i][1] -= d_power * dx * dy;
            d_conic[i][2] -= d_power * dy * dy / T::lit(2.0);
        }
    }

    let mut grads = RenderGrads::zeros(n, color_len(scene, colors));
    let center = cam.center();
    let degree = scene.sh_degree();
    let sh_len = scene.sh_len();
    let mut basis = [zero; 16];
    let mut basis_grad = [[zero; 3]; 16];
    for (i, g) in scene.gaussians.iter().enumerate() {
        // opacity pathways
        let dop = d_opacity[i];
        match trace.mode {
            RenderMode::TrainStochastic { .. } => {
                let (dm, ds) = opacity_train_grad(g.opacity_mean, g.opacity_std(), T::lit(trace.noise[i]));
                grads.opacity_mean[i] = dop * dm;
                grads.opacity_std_raw[i] = dop * ds * scalar::sigmoid(g.opacity_std_raw);
            }
            RenderMode::InferenceExpected => {
                let (dm, ds) = opacity_expected_grad(g.opacity_mean, g.opacity_std());
                grads.opacity_mean[i] = dop * dm;
                grads.opacity_std_raw[i] = dop * ds * scalar::sigmoid(g.opacity_std_raw);
            }
            RenderMode::DeterministicMean => {
                grads.opacity_mean[i] = dop * scalar::sigmoid_grad(g.opacity_mean);
            }
        }

        // conic -> covariance: dSigma = -Sigma^-1 dConic Sigma^-1
        if trace.projected[i].is_some() {
            let q = trace.conics[i];
            let inv = [[q[0], q[1]], [q[1], q[2]]];
            let half = d_conic[i][1] / T::lit(2.0);
            let gc = [[d_conic[i][0], half], [half, d_conic[i][2]]];
            let mut d_sigma = [[zero; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    let mut acc = zero;
                    for k in 0..2 {
                        for l in 0..2 {
                            acc += inv[a][k] * gc[k][l] * inv[l][b];
                        }
                    }
                    d_sigma[a][b] = -acc;
                }
            }
            let d_cov = [d_sigma[0][0], d_sigma[0][1] + d_sigma[1][0], d_sigma[1][1]];
            let geo = project_backward(g, cam, d_mean[i], d_cov);
            grads.position[i] = geo.position;
            grads.rotation[i] = geo.rotation;
            grads.log_scale[i] = geo.log_scale;
            grads.mean2d[i] = d_mean[i];
        }

        match colors {
            ColorSource::Rgb(_) => grads.colors[i * 3..i * 3 + 3].copy_from_slice(&d_rgb[i]),
            ColorSource::Sh(coeffs) => {
                let (dir, norm) = view_direction(g.position, center);
                let count = sh_len / 3;
                sh_basis_with_grad(degree, dir, &mut basis, &mut basis_grad);
                let c = &coeffs[i * sh_len..(i + 1) * sh_len];
                let mut d_dir = [zero; 3];
                for k in 0..count {
                    for ch in 0..3 {
                        grads.colors[i * sh_len + k * 3 + ch] = basis[k] * d_rgb[i][ch];
                        let w = d_rgb[i][ch] * c[k * 3 + ch];
                        for j in 0..3 {
                            d_dir[j] += w * basis_grad[k][j];
                        }
                    }
                }
                if norm > zero {
                    let dot = mat::dot3(dir, d_dir);
                    for j in 0..3 {
                        grads.position[i][j] += (d_dir[j] - dir[j] * dot) / norm;
                    }
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests;
