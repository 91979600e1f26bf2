use crate::error::{Error, Result};
use crate::numerics::{scalar, sh_coeff_count, Real};
use crate::scene::{MAX_SCALE, MIN_SCALE};

pub const DEFAULT_SH_DEGREE: usize = 3;
pub const DEFAULT_EMBED_DIM: usize = 8;

/// One anisotropic 3D Gaussian.
///
/// Opacity is a distribution: `opacity_mean` is the logit-domain mean and
/// `opacity_std_raw` the pre-softplus standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive<T> {
    pub position: [T; 3],
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [T; 4],
    pub log_scale: [T; 3],
    pub opacity_mean: T,
    pub opacity_std_raw: T,
    pub sh: Vec<T>,
    pub embedding: Vec<T>,
}

impl<T: Real> GaussianPrimitive<T> {
    pub fn new(sh_degree: usize, embed_dim: usize) -> Self {
        Self {
            position: [T::zero(); 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            log_scale: [T::zero(); 3],
            opacity_mean: T::zero(),
            opacity_std_raw: T::zero(),
            sh: vec![T::zero(); 3 * sh_coeff_count(sh_degree)],
            embedding: vec![T::zero(); embed_dim],
        }
    }

    /// Opacity standard deviation `softplus(opacity_std_raw) >= 0`.
    pub fn opacity_std(&self) -> T {
        scalar::softplus(self.opacity_std_raw)
    }

    /// `exp(log_scale)` clamped to the supported range.
    pub fn scale(&self) -> [T; 3] {
        self.log_scale.map(|s| s.exp().max(T::lit(MIN_SCALE)).min(T::lit(MAX_SCALE)))
    }

    /// Renormalizes the rotation quaternion.
    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if n > T::zero() {
            self.rotation = self.rotation.map(|v| v / n);
        } else {
            self.rotation = [T::one(), T::zero(), T::zero(), T::zero()];
        }
    }

    /// Clamps `log_scale` so `exp(log_scale)` stays within bounds.
    pub fn clamp_scale(&mut self) {
        let (lo, hi) = (T::lit(MIN_SCALE.ln()), T::lit(MAX_SCALE.ln()));
        self.log_scale = self.log_scale.map(|s| s.max(lo).min(hi));
    }

    pub fn cast<U: Real>(&self) -> GaussianPrimitive<U> {
        let c = |v: T| U::lit(v.as_f64());
        GaussianPrimitive {
            position: self.position.map(c),
            rotation: self.rotation.map(c),
            log_scale: self.log_scale.map(c),
            opacity_mean: c(self.opacity_mean),
            opacity_std_raw: c(self.opacity_std_raw),
            sh: self.sh.iter().map(|v| c(*v)).collect(),
            embedding: self.embedding.iter().map(|v| c(*v)).collect(),
        }
    }
}

/// A set of Gaussians sharing an SH degree and embedding size.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    sh_degree: usize,
    embed_dim: usize,
    pub gaussians: Vec<GaussianPrimitive<T>>,
}

impl<T: Real> Scene<T> {
    pub fn new(sh_degree: usize, embed_dim: usize) -> Result<Self> {
        if sh_degree > crate::numerics::sh::MAX_SH_DEGREE {
            return Err(Error::Validation(format!("SH degree {sh_degree} exceeds 3")));
        }
        Ok(Self { sh_degree, embed_dim, gaussians: Vec::new() })
    }

    pub fn with_gaussians(sh_degree: usize, embed_dim: usize, gaussians: Vec<GaussianPrimitive<T>>) -> Result<Self> {
        let mut scene = Self::new(sh_degree, embed_dim)?;
        for g in gaussians {
            scene.push(g)?;
        }
        Ok(scene)
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// SH coefficient count per Gaussian, `3 (D+1)^2`.
    pub fn sh_len(&self) -> usize {
        3 * sh_coeff_count(self.sh_degree)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, g: GaussianPrimitive<T>) -> Result<()> {
        if g.sh.len() != self.sh_len() || g.embedding.len() != self.embed_dim {
            return Err(Error::Shape(format!(
                "gaussian has {} SH / {} embedding values, scene expects {} / {}",
                g.sh.len(),
                g.embedding.len(),
                self.sh_len(),
                self.embed_dim
            )));
        }
        self.gaussians.push(g);
        Ok(())
    }

    /// Flattened SH coefficients of every Gaussian, `N * sh_len`.
    pub fn sh_coefficients(&self) -> Vec<T> {
        self.gaussians.iter().flat_map(|g| g.sh.iter().copied()).collect()
    }

    pub fn cast<U: Real>(&self) -> Scene<U> {
        Scene {
            sh_degree: self.sh_degree,
            embed_dim: self.embed_dim,
            gaussians: self.gaussians.iter().map(|g| g.cast()).collect(),
        }
    }
}

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image<T>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamped(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.max(T::zero()).min(T::one())).collect(),
        }
    }

    /// Channel-major `[3,H,W]` copy, the layout the field networks consume.
    pub fn to_planar(&self) -> Vec<T> {
        let n = self.width * self.height;
        let mut out = vec![T::zero(); 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = self.data[p * 3 + c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_is_clamped() {
        let mut g = GaussianPrimitive::<f64>::new(0, 0);
        g.log_scale = [-100.0, 0.0, 100.0];
        assert_eq!(g.scale(), [MIN_SCALE, 1.0, MAX_SCALE]);
        g.clamp_scale();
        assert!((g.log_scale[0] - MIN_SCALE.ln()).abs() < 1e-12);
    }

    #[test]
    fn opacity_std_is_nonnegative() {
        let mut g = GaussianPrimitive::<f64>::new(0, 0);
        for raw in [-50.0, -1.0, 0.0, 3.0] {
            g.opacity_std_raw = raw;
            assert!(g.opacity_std() >= 0.0);
        }
    }

    #[test]
    fn push_checks_shapes() {
        let mut s = Scene::<f64>::new(1, 4).unwrap();
        assert!(s.push(GaussianPrimitive::new(1, 4)).is_ok());
        assert!(s.push(GaussianPrimitive::new(2, 4)).is_err());
        assert!(s.push(GaussianPrimitive::new(1, 3)).is_err());
        assert!(Scene::<f64>::new(4, 0).is_err());
    }

    #[test]
    fn rotation_renormalizes() {
        let mut g = GaussianPrimitive::<f64>::new(0, 0);
        g.rotation = [2.0, 0.0, 2.0, 0.0];
        g.normalize_rotation();
        let n: f64 = g.rotation.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
