//! Illumination-conditioned color field.
//!
//! An encoder maps an image to a latent `z`; a decoder expands `z` to a
//! feature map at the conditioning image's resolution. Each Gaussian samples
//! that map at its projection, and a small MLP turns the sample, the
//! Gaussian's embedding and its encoded position into an SH residual. The
//! residual depends on `(z, conditioning camera)` only, so one field
//! evaluation colors the scene for every render camera. A generator maps
//! noise to latents for sampling new illuminations.

mod queue;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{sh_coeff_count, Tape, Tensor, Var};
use crate::scene::{Camera, Image, Scene};

pub use queue::{LatentQueueBank, DEFAULT_QUEUE_CAPACITY, DEFAULT_TAU};

/// Total downsampling factor of the encoder.
pub const ENCODER_STRIDE: usize = 8;
const KERNEL: usize = 3;
const GENERATOR_LAYERS: usize = 5;

/// Network sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldConfig {
    pub latent_channels: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub feature_channels: usize,
    pub encoder_widths: [usize; 2],
    pub decoder_widths: [usize; 3],
    pub hidden: usize,
    pub pe_bands: usize,
    pub sh_degree: usize,
    pub embed_dim: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            latent_channels: 24,
            latent_height: 8,
            latent_width: 8,
            feature_channels: 16,
            encoder_widths: [16, 24],
            decoder_widths: [24, 24, 16],
            hidden: 64,
            pe_bands: 4,
            sh_degree: crate::scene::DEFAULT_SH_DEGREE,
            embed_dim: crate::scene::DEFAULT_EMBED_DIM,
        }
    }
}

impl FieldConfig {
    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.latent_height, self.latent_width]
    }

    pub fn latent_len(&self) -> usize {
        self.latent_channels * self.latent_height * self.latent_width
    }

    /// SH residual length per Gaussian.
    pub fn sh_len(&self) -> usize {
        3 * sh_coeff_count(self.sh_degree)
    }

    fn mlp_input(&self) -> usize {
        self.feature_channels + self.embed_dim + 3 * (1 + 2 * self.pe_bands)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Encoder,
    Generator,
    CleanScene,
    /// Mean of a style queue.
    QueueMean,
}

/// A latent of shape `[C_z, H_z, W_z]` scaled to norm `sqrt(C_z H_z W_z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationLatent {
    pub z: Tensor,
    pub style_id: Option<usize>,
    pub source: LatentSource,
}

impl IlluminationLatent {
    /// Rescales a unit vector to latent norm.
    pub fn from_unit(
        unit: &[f64],
        config: &FieldConfig,
        style_id: Option<usize>,
        source: LatentSource,
    ) -> Result<Self> {
        if unit.len() != config.latent_len() {
            return Err(Error::Shape(format!("latent needs {} values, got {}", config.latent_len(), unit.len())));
        }
        let scale = (unit.len() as f64).sqrt();
        Ok(Self {
            z: Tensor::new(config.latent_shape().to_vec(), unit.iter().map(|v| v * scale).collect())?,
            style_id,
            source,
        })
    }

    /// Flattened unit-norm view used for all similarity computations.
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.z.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.z.data().iter().map(|v| v / n).collect()
    }
}

/// Cosine similarity of two latents.
pub fn cosine(a: &IlluminationLatent, b: &IlluminationLatent) -> f64 {
    a.normalized().iter().zip(b.normalized()).map(|(x, y)| x * y).sum()
}

/// Standard normal tensor of latent shape.
pub fn sample_noise(config: &FieldConfig, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..config.latent_len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(config.latent_shape().to_vec(), data).expect("latent shape")
}

/// Per-Gaussian SH coefficients (scene SH plus residual) for one latent and
/// conditioning camera, reusable across render cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSharedColors {
    pub coeffs: Vec<f64>,
}

impl ViewSharedColors {
    /// SHA-256 of the coefficient buffer.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.coeffs {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Handles to the network parameters on a tape, in [`FieldNetworks::params`]
/// order.
#[derive(Clone, Debug)]
pub struct BoundField {
    vars: Vec<Var>,
}

impl BoundField {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Encoder, decoder, color MLP and generator weights.
#[derive(Debug)]
pub struct FieldNetworks {
    config: FieldConfig,
    params: Vec<(String, Tensor)>,
    evaluations: AtomicUsize,
}

impl Clone for FieldNetworks {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            evaluations: AtomicUsize::new(self.evaluations()),
        }
    }
}

impl PartialEq for FieldNetworks {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

struct Layout {
    encoder: usize,
    decoder: usize,
    mlp: usize,
}

impl FieldNetworks {
    /// Fresh networks: uniform He initialization, zero biases, and a zero
    /// final MLP layer so the initial residual vanishes.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        if config.latent_channels == 0
            || config.latent_height == 0
            || config.latent_width == 0
            || config.feature_channels == 0
        {
            return Err(Error::Validation("field sizes must be positive".into()));
        }
        if config.sh_degree > crate::numerics::sh::MAX_SH_DEGREE {
            return Err(Error::Validation(format!("SH degree {} too large", config.sh_degree)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut conv = |name: &str, out: usize, inp: usize, params: &mut Vec<(String, Tensor)>| {
            let fan_in = (inp * KERNEL * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let dist = Uniform::new(-bound, bound).expect("valid bound");
            let w = (0..out * inp * KERNEL * KERNEL).map(|_| dist.sample(&mut rng)).collect();
            params.push((format!("{name}.weight"), Tensor::param([out, inp, KERNEL, KERNEL], w).expect("shape")));
            params.push((format!("{name}.bias"), Tensor::param([out], vec![0.0; out]).expect("shape")));
        };
        let c = &config;
        let [e1, e2] = c.encoder_widths;
        conv("encoder.conv1", e1, 3, &mut params);
        conv("encoder.conv2", e2, e1, &mut params);
        conv("encoder.conv3", c.latent_channels, e2, &mut params);
        let [d0, d1, d2] = c.decoder_widths;
        conv("decoder.conv0", d0, c.latent_channels, &mut params);
        conv("decoder.conv1", d1, d0, &mut params);
        conv("decoder.conv2", d2, d1, &mut params);
        conv("decoder.conv3", c.feature_channels, d2, &mut params);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x006d_6c70);
        let dims = [c.mlp_input(), c.hidden, c.hidden, c.sh_len()];
        for l in 0..3 {
            let (i, o) = (dims[l], dims[l + 1]);
            let w = if l == 2 {
                vec![0.0; i * o]
            } else {
                let bound = (6.0 / i as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("valid bound");
                (0..i * o).map(|_| dist.sample(&mut rng)).collect()
            };
            params.push((format!("color_mlp.{l}.weight"), Tensor::param([i, o], w)?));
            params.push((format!("color_mlp.{l}.bias"), Tensor::param([o], vec![0.0; o])?));
        }
        let mut rng_g = ChaCha8Rng::seed_from_u64(seed ^ 0x67_656e);
        for l in 1..=GENERATOR_LAYERS {
            let n = c.latent_channels;
            let bound = (6.0 / (n * KERNEL * KERNEL) as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("valid bound");
            let w = (0..n * n * KERNEL * KERNEL).map(|_| dist.sample(&mut rng_g)).collect();
            params.push((format!("generator.conv{l}.weight"), Tensor::param([n, n, KERNEL, KERNEL], w)?));
            params.push((format!("generator.conv{l}.bias"), Tensor::param([n], vec![0.0; n])?));
        }
        Ok(Self { config, params, evaluations: AtomicUsize::new(0) })
    }

    fn layout() -> Layout {
        Layout { encoder: 0, decoder: 6, mlp: 14 }
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    /// Named parameters in a fixed order.
    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    /// Replaces all parameters; names and shapes must match.
    pub fn load_params(&mut self, params: Vec<(String, Tensor)>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Validation(format!("expected {} tensors, got {}", self.params.len(), params.len())));
        }
        for ((n0, t0), (n1, t1)) in self.params.iter().zip(&params) {
            if n0 != n1 || t0.shape() != t1.shape() {
                return Err(Error::Validation(format!(
                    "tensor {n1} {:?} does not match {n0} {:?}",
                    t1.shape(),
                    t0.shape()
                )));
            }
        }
        self.params = params.into_iter().map(|(n, t)| (n, t.with_requires_grad(true))).collect();
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Number of view-shared color evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    /// Records all parameters on `tape`; with `trainable = false` they are
    /// constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundField {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        BoundField { vars }
    }

    fn conv(tape: &mut Tape, b: &BoundField, first: usize, x: Var, stride: usize) -> Var {
        tape.conv2d(x, b.vars[first], b.vars[first + 1], stride, KERNEL / 2)
    }

    fn check_image_size(&self, width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 || !width.is_multiple_of(ENCODER_STRIDE) || !height.is_multiple_of(ENCODER_STRIDE)
        {
            return Err(Error::Shape(format!(
                "image size {width}x{height} must be a positive multiple of {ENCODER_STRIDE}"
            )));
        }
        Ok(())
    }

    /// `z = sqrt(n) * h / ||h||` for the pooled encoder output `h`.
    pub fn encode_graph(&self, tape: &mut Tape, b: &BoundField, image: &Image<f64>) -> Result<Var> {
        self.check_image_size(image.width(), image.height())?;
        let x = tape.constant(Tensor::new([3, image.height(), image.width()], image.to_planar())?);
        let e = Self::layout().encoder;
        let h1 = Self::conv(tape, b, e, x, 2);
        let h1 = tape.relu(h1);
        let h2 = Self::conv(tape, b, e + 2, h1, 2);
        let h2 = tape.relu(h2);
        let h3 = Self::conv(tape, b, e + 4, h2, 2);
        let c = &self.config;
        let pooled = tape.adaptive_avg_pool(h3, c.latent_height, c.latent_width);
        Ok(tape.normalize(pooled, (c.latent_len() as f64).sqrt()))
    }

    /// Feature map `[C_f, height, width]`.
    pub fn decode_graph(&self, tape: &mut Tape, b: &BoundField, z: Var, height: usize, width: usize) -> Result<Var> {
        if height < 4 || width < 4 {
            return Err(Error::Shape(format!("decoder output {width}x{height} is too small")));
        }
        let d = Self::layout().decoder;
        let h0 = Self::conv(tape, b, d, z, 1);
        let h0 = tape.relu(h0);
        let u1 = tape.resize_nearest(h0, height / 4, width / 4);
        let h1 = Self::conv(tape, b, d + 2, u1, 1);
        let h1 = tape.relu(h1);
        let u2 = tape.resize_nearest(h1, height / 2, width / 2);
        let h2 = Self::conv(tape, b, d + 4, u2, 1);
        let h2 = tape.relu(h2);
        let u3 = tape.resize_nearest(h2, height, width);
        Ok(Self::conv(tape, b, d + 6, u3, 1))
    }

    /// Residual `[N, 3 (D+1)^2]` from features sampled at each position's
    /// projection into `cond_cam`, the embeddings `[N, E]` and the encoded
    /// positions.
    pub fn residual_graph(
        &self,
        tape: &mut Tape,
        b: &BoundField,
        features: Var,
        positions: Var,
        embeddings: Var,
        cond_cam: &Camera<f64>,
    ) -> Var {
        let l = tape.bilinear_sample(features, positions, cond_cam);
        let pe = tape.positional_encoding(positions, self.config.pe_bands);
        let x = tape.concat_cols(&[l, embeddings, pe]);
        let m = Self::layout().mlp;
        let h = tape.linear(x, b.vars[m], b.vars[m + 1]);
        let h = tape.relu(h);
        let h = tape.linear(h, b.vars[m + 2], b.vars[m + 3]);
        let h = tape.relu(h);
        tape.linear(h, b.vars[m + 4], b.vars[m + 5])
    }

    /// Five 3x3 convolutions with ReLU between them, normalized like encoder
    /// latents.
    pub fn generate_graph(&self, tape: &mut Tape, b: &BoundField, noise: Var) -> Result<Var> {
        if tape.value(noise).shape() != self.config.latent_shape() {
            return Err(Error::Shape(format!(
                "noise shape {:?} differs from latent shape {:?}",
                tape.value(noise).shape(),
                self.config.latent_shape()
            )));
        }
        let g = Self::layout().mlp + 6;
        let mut h = noise;
        for l in 0..GENERATOR_LAYERS {
            h = Self::conv(tape, b, g + 2 * l, h, 1);
            if l + 1 < GENERATOR_LAYERS {
                h = tape.relu(h);
            }
        }
        Ok(tape.normalize(h, (self.config.latent_len() as f64).sqrt()))
    }

    pub fn encode(&self, image: &Image<f64>) -> Result<IlluminationLatent> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let z = self.encode_graph(&mut tape, &b, image)?;
        tape.check_finite()?;
        Ok(IlluminationLatent { z: tape.value(z).clone(), style_id: None, source: LatentSource::Encoder })
    }

    pub fn generate_latent(&self, noise: &Tensor) -> Result<IlluminationLatent> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let n = tape.constant(noise.clone());
        let z = self.generate_graph(&mut tape, &b, n)?;
        tape.check_finite()?;
        Ok(IlluminationLatent { z: tape.value(z).clone(), style_id: None, source: LatentSource::Generator })
    }

    fn check_latent(&self, latent: &IlluminationLatent) -> Result<()> {
        if latent.z.shape() != self.config.latent_shape() {
            return Err(Error::Shape(format!(
                "latent shape {:?} differs from {:?}",
                latent.z.shape(),
                self.config.latent_shape()
            )));
        }
        Ok(())
    }

    /// Decoded feature map at `height x width`.
    pub fn decode(&self, latent: &IlluminationLatent, height: usize, width: usize) -> Result<Tensor> {
        self.check_latent(latent)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let z = tape.constant(latent.z.clone());
        let f = self.decode_graph(&mut tape, &b, z, height, width)?;
        Ok(tape.value(f).clone())
    }

    /// Bilinear samples `[N, C_f]` of `features` at each Gaussian's
    /// projection into `cond_cam`.
    pub fn sample_point_features(features: &Tensor, scene: &Scene<f64>, cond_cam: &Camera<f64>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let p = tape.constant(positions_tensor(scene)?);
        let s = tape.bilinear_sample(f, p, cond_cam);
        Ok(tape.value(s).clone())
    }

    /// SH coefficients `scene.sh + residual` for `latent` seen through
    /// `cond_cam`. Counts as one field evaluation.
    pub fn view_shared_colors(
        &self,
        scene: &Scene<f64>,
        latent: &IlluminationLatent,
        cond_cam: &Camera<f64>,
    ) -> Result<ViewSharedColors> {
        self.check_latent(latent)?;
        self.check_scene(scene)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let z = tape.constant(latent.z.clone());
        let f = self.decode_graph(&mut tape, &b, z, cond_cam.height(), cond_cam.width())?;
        let p = tape.constant(positions_tensor(scene)?);
        let e = tape.constant(embeddings_tensor(scene)?);
        let v = self.residual_graph(&mut tape, &b, f, p, e, cond_cam);
        tape.check_finite()?;
        let mut coeffs = scene.sh_coefficients();
        for (c, r) in coeffs.iter_mut().zip(tape.value(v).data()) {
            *c += r;
        }
        Ok(ViewSharedColors { coeffs })
    }

    pub(crate) fn check_scene(&self, scene: &Scene<f64>) -> Result<()> {
        if scene.sh_degree() != self.config.sh_degree || scene.embed_dim() != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "scene has SH degree {} and embedding {}, field expects {} and {}",
                scene.sh_degree(),
                scene.embed_dim(),
                self.config.sh_degree,
                self.config.embed_dim
            )));
        }
        Ok(())
    }
}

/// Positions as an `[N, 3]` tensor.
pub fn positions_tensor(scene: &Scene<f64>) -> Result<Tensor> {
    Tensor::new([scene.len(), 3], scene.gaussians.iter().flat_map(|g| g.position).collect())
}

/// Embeddings as an `[N, E]` tensor.
pub fn embeddings_tensor(scene: &Scene<f64>) -> Result<Tensor> {
    Tensor::new(
        [scene.len(), scene.embed_dim()],
        scene.gaussians.iter().flat_map(|g| g.embedding.iter().copied()).collect(),
    )
}

#[cfg(test)]
mod tests;
