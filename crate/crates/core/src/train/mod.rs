//! Optimization loop: reconstruction, contrastive and uncertainty losses,
//! Adam, density control and the M1..M6 ablation switches.

mod adam;
mod checkpoint;
mod config;
mod density;
mod loss;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{
    embeddings_tensor, positions_tensor, sample_noise, FieldNetworks, IlluminationLatent, LatentQueueBank,
    LatentSource, ViewSharedColors,
};
use crate::numerics::{logit, sigmoid, softplus_inverse, Tensor};
use crate::render::{opacity_expected, render, render_backward, render_traced, ColorSource, RenderMode, Upstream};
use crate::scene::{Camera, GaussianPrimitive, Image, Scene};
use crate::synth::metrics::{psnr, ssim};
use crate::synth::{Split, SynthDataset};

pub use adam::Moments;
pub use checkpoint::{CHECKPOINT_FILES, METRICS_HEADER};
pub use config::{TrainConfig, Variant};
pub use loss::{reconstruction_loss, reconstruction_loss_with_grad, uncertainty_reg_loss};
pub use params::{ParamClass, SceneGrads};

/// Background used for training and evaluation renders.
pub const BACKGROUND: [f64; 3] = [0.0; 3];

/// One (view, style) training sample and the randomness it consumes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub view: usize,
    pub style: usize,
    /// Seeds the per-Gaussian opacity noise.
    pub opacity_seed: u64,
    /// Seeds the generator input.
    pub noise_seed: u64,
    /// Clean-pool entry used as the universal negative.
    pub clean_index: usize,
    /// Clean image encoded into the pool after the step.
    pub clean_image: usize,
}

/// Loss breakdown of one step. `total = l_rec + l_contra + lambda_ucn * l_ucn`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub view: usize,
    pub style: usize,
    pub l_rec: f64,
    pub l_contra: f64,
    pub l_ucn: f64,
    pub total: f64,
    pub psnr: f64,
    /// Gradients handed to Adam.
    pub grads: SceneGrads,
    /// Squared norm of all network gradients.
    pub field_grad_norm2: f64,
}

/// Windowed averages written every `log_interval` iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub l_rec: f64,
    pub l_contra: f64,
    pub l_ucn: f64,
    pub psnr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub view: usize,
    pub style: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub psnr: f64,
    pub ssim: f64,
}

impl EvalReport {
    /// Mean PSNR and SSIM of one style group.
    pub fn style_means(&self, style: usize) -> (f64, f64) {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.style == style).collect();
        let n = rows.len().max(1) as f64;
        (rows.iter().map(|r| r.psnr).sum::<f64>() / n, rows.iter().map(|r| r.ssim).sum::<f64>() / n)
    }

    /// `view,style,psnr,ssim` rows followed by an `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,style,psnr,ssim\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.view, r.style, r.psnr, r.ssim));
        }
        out.push_str(&format!("average,all,{:.6},{:.6}\n", self.psnr, self.ssim));
        out
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub scene: Scene<f64>,
    pub field: FieldNetworks,
    pub bank: LatentQueueBank,
    pub cameras: Vec<Camera<f64>>,
    pub train_views: Vec<usize>,
    /// Radius of the training cameras around their centroid, times 1.1.
    pub spatial_extent: f64,
    pub iteration: u64,
    pub metrics: Vec<MetricsRow>,
    rng: ChaCha8Rng,
    scene_moments: Vec<Moments>,
    field_moments: Vec<Moments>,
    grad_accum: Vec<f64>,
    grad_count: Vec<u64>,
    /// Running sums of l_rec, l_contra, l_ucn, psnr and the step count.
    window: [f64; 5],
}

impl PartialEq for TrainState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.scene == other.scene
            && self.field == other.field
            && self.bank == other.bank
            && self.cameras == other.cameras
            && self.train_views == other.train_views
            && self.spatial_extent.to_bits() == other.spatial_extent.to_bits()
            && self.iteration == other.iteration
            && self.metrics == other.metrics
            && self.rng == other.rng
            && self.scene_moments == other.scene_moments
            && self.field_moments == other.field_moments
            && self.grad_accum == other.grad_accum
            && self.grad_count == other.grad_count
            && self.window == other.window
    }
}

/// Result of [`run_training`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub heldout: EvalReport,
}

fn check_dataset(config: &TrainConfig, data: &SynthDataset) -> Result<()> {
    let groups = config.styles + 1;
    if data.style_count() != groups {
        return Err(Error::Validation(format!(
            "config expects {} style groups, dataset has {}",
            groups,
            data.style_count()
        )));
    }
    if data.images.len() != data.cameras.len() || data.splits.len() != data.cameras.len() {
        return Err(Error::Validation(format!(
            "dataset has {} cameras, {} image sets and {} split tags",
            data.cameras.len(),
            data.images.len(),
            data.splits.len()
        )));
    }
    for (j, (cam, set)) in data.cameras.iter().zip(&data.images).enumerate() {
        if set.len() != groups {
            return Err(Error::Validation(format!("view {j} has {} images, expected {groups}", set.len())));
        }
        if set.iter().any(|im| im.width() != cam.width() || im.height() != cam.height()) {
            return Err(Error::Validation(format!("view {j} image size differs from its camera")));
        }
    }
    if data.views(Split::Train).is_empty() {
        return Err(Error::Validation("dataset has no training views".into()));
    }
    if config.variant.neural_field() && data.clean.is_empty() {
        return Err(Error::Validation("the neural field needs clean images".into()));
    }
    Ok(())
}

fn camera_extent(cameras: &[Camera<f64>]) -> f64 {
    let centers: Vec<[f64; 3]> = cameras.iter().map(|c| c.center()).collect();
    let n = centers.len() as f64;
    let mean = [0, 1, 2].map(|k| centers.iter().map(|c| c[k]).sum::<f64>() / n);
    let radius = centers
        .iter()
        .map(|c| ((c[0] - mean[0]).powi(2) + (c[1] - mean[1]).powi(2) + (c[2] - mean[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    1.1 * radius.max(1e-6)
}

/// Random initial cloud inside the dataset's extent with isotropic scales
/// from the three nearest neighbours.
fn initial_scene(config: &TrainConfig, extent: f64, rng: &mut ChaCha8Rng) -> Result<Scene<f64>> {
    let n = config.init_points;
    let positions: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.random_range(-extent..extent))).collect();
    let mut scene = Scene::new(config.sh_degree, config.embed_dim)?;
    let dc = 1.0 / crate::numerics::sh::SH_C0;
    for (i, p) in positions.iter().enumerate() {
        let mut d2: Vec<f64> = positions
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
            .collect();
        d2.sort_by(f64::total_cmp);
        let k = d2.len().min(3);
        let mean = if k == 0 { extent * extent } else { d2[..k].iter().sum::<f64>() / k as f64 };
        let s = mean.sqrt().max(1e-7).ln();
        let mut g = GaussianPrimitive::new(config.sh_degree, config.embed_dim);
        g.position = *p;
        g.log_scale = [s; 3];
        g.opacity_mean = logit(config.init_opacity);
        g.opacity_std_raw = softplus_inverse(config.init_opacity_std);
        for c in 0..3 {
            g.sh[c] = rng.random_range(0.1..0.9) * dc;
        }
        for e in &mut g.embedding {
            let v: f64 = StandardNormal.sample(rng);
            *e = 0.1 * v;
        }
        scene.push(g)?;
    }
    Ok(scene)
}

impl TrainState {
    /// Fresh state for `data`. Field weights, the initial cloud and every
    /// later random draw derive from `config.seed`.
    pub fn new(config: TrainConfig, data: &SynthDataset) -> Result<Self> {
        config.validate()?;
        check_dataset(&config, data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scene = initial_scene(&config, data.spec.extent, &mut rng)?;
        let field = FieldNetworks::new(config.field_config(), config.seed ^ 0x0066_6965_6c64)?;
        let mut bank = LatentQueueBank::new(
            config.styles + 1,
            config.queue_capacity,
            config.clean_capacity,
            field.config().latent_len(),
        )?;
        if config.variant.neural_field() {
            for img in data.clean.iter().take(config.clean_capacity) {
                bank.push_clean(field.encode(img)?.z.data())?;
            }
        }
        let train_views = data.views(Split::Train);
        let train_cams: Vec<Camera<f64>> = train_views.iter().map(|&j| data.cameras[j].clone()).collect();
        if config.cond_camera >= train_views.len() {
            return Err(Error::Validation(format!(
                "cond_camera {} but only {} training views",
                config.cond_camera,
                train_views.len()
            )));
        }
        let scene_moments = ParamClass::ALL.iter().map(|c| Moments::zeros(c.width(&scene) * scene.len())).collect();
        let field_moments = field.params().iter().map(|(_, t)| Moments::zeros(t.len())).collect();
        let n = scene.len();
        Ok(Self {
            spatial_extent: camera_extent(&train_cams),
            config,
            scene,
            field,
            bank,
            cameras: data.cameras.clone(),
            train_views,
            iteration: 0,
            metrics: Vec::new(),
            rng,
            scene_moments,
            field_moments,
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            window: [0.0; 5],
        })
    }

    /// Opacity mode for evaluation renders.
    pub fn inference_mode(&self) -> RenderMode {
        if self.config.variant.uaoo() {
            RenderMode::InferenceExpected
        } else {
            RenderMode::DeterministicMean
        }
    }

    /// Draws the next (view, style) sample from the state's generator.
    pub fn next_batch(&mut self, data: &SynthDataset) -> Batch {
        let view = self.train_views[self.rng.random_range(0..self.train_views.len())];
        let style = self.rng.random_range(0..self.config.styles + 1);
        let opacity_seed = self.rng.random();
        let noise_seed = self.rng.random();
        let pool = self.bank.clean_pool().len().max(1);
        let clean_index = self.rng.random_range(0..pool);
        let clean_image = self.rng.random_range(0..data.clean.len().max(1));
        Batch { view, style, opacity_seed, noise_seed, clean_index, clean_image }
    }

    fn position_lr(&self) -> f64 {
        let r = (self.iteration as f64 / self.config.iterations.max(1) as f64).clamp(0.0, 1.0);
        let (a, b) = (self.config.lr_position.ln(), self.config.lr_position_final.ln());
        ((1.0 - r) * a + r * b).exp() * self.spatial_extent
    }

    fn class_lr(&self, class: ParamClass) -> f64 {
        let c = &self.config;
        match class {
            ParamClass::Position => self.position_lr(),
            ParamClass::Rotation => c.lr_rotation,
            ParamClass::LogScale => c.lr_scale,
            ParamClass::OpacityMean | ParamClass::OpacityStd => c.lr_opacity,
            ParamClass::ShDc => c.lr_sh,
            ParamClass::ShRest => c.lr_sh / 20.0,
            ParamClass::Embedding => c.lr_embedding,
        }
    }

    fn class_enabled(&self, class: ParamClass) -> bool {
        match class {
            ParamClass::OpacityStd => self.config.variant.uaoo(),
            ParamClass::Embedding => self.config.variant.neural_field(),
            _ => true,
        }
    }

    /// One optimization step on `batch`; see [`StepReport`] for the losses.
    pub fn train_step(&mut self, data: &SynthDataset, batch: &Batch) -> Result<StepReport> {
        if self.scene.is_empty() {
            return Err(Error::Validation("scene has no Gaussians left to train".into()));
        }
        if batch.view >= self.cameras.len() || batch.style > self.config.styles {
            return Err(Error::Validation(format!("batch ({}, {}) is out of range", batch.view, batch.style)));
        }
        let variant = self.config.variant;
        let cam = self.cameras[batch.view].clone();
        let target = data.image(batch.view, batch.style);
        let mode = if variant.uaoo() {
            RenderMode::TrainStochastic { seed: batch.opacity_seed }
        } else {
            RenderMode::DeterministicMean
        };
        let n = self.scene.len();
        let sh_len = self.scene.sh_len();

        let mut nf = None;
        let mut coeffs = self.scene.sh_coefficients();
        if variant.neural_field() {
            let mut tape = crate::numerics::Tape::new();
            let bound = self.field.bind(&mut tape, true);
            let z = self.field.encode_graph(&mut tape, &bound, target)?;
            let f = self.field.decode_graph(&mut tape, &bound, z, cam.height(), cam.width())?;
            let p = tape.leaf(positions_tensor(&self.scene)?.with_requires_grad(true));
            let e = tape.leaf(embeddings_tensor(&self.scene)?.with_requires_grad(true));
            let v = self.field.residual_graph(&mut tape, &bound, f, p, e, &cam);
            for (c, r) in coeffs.iter_mut().zip(tape.value(v).data()) {
                *c += r;
            }
            nf = Some((tape, bound, z, p, e, v));
        }

        let (out, trace) = render_traced(&self.scene, &cam, ColorSource::Sh(&coeffs), mode, BACKGROUND)?;
        let (l_rec, d_img) = reconstruction_loss_with_grad(&out.composited, target, self.config.dssim_weight, true)?;
        let d_img = d_img.expect("gradient requested");
        let rg = render_backward(
            &trace,
            &self.scene,
            &cam,
            ColorSource::Sh(&coeffs),
            mode,
            Upstream { color: &d_img, alpha: None },
        )?;

        let mut grads = SceneGrads::from_render(&self.scene, &rg);
        let mut l_ucn = 0.0;
        if !variant.uaoo() {
            grads.get_mut(ParamClass::OpacityStd).fill(0.0);
        } else {
            let sign = self.config.ucn_sign;
            l_ucn = sign * -uncertainty_reg_loss(&self.scene);
            if !self.config.ucn_decoupled {
                let lambda = self.config.lambda_ucn;
                for (d, g) in grads.get_mut(ParamClass::OpacityStd).iter_mut().zip(&self.scene.gaussians) {
                    *d += lambda * sign * sigmoid(g.opacity_std_raw);
                }
            }
        }

        let mut l_contra = 0.0;
        let mut field_grads: Vec<Option<Tensor>> = Vec::new();
        let mut latent = None;
        if let Some((mut tape, bound, z, p, e, v)) = nf {
            let mut seeds = vec![(v, Tensor::new([n, sh_len], rg.colors.clone())?)];
            let clean_ready = self.bank.clean_pool().len() > 0;
            if clean_ready && self.bank.queue(batch.style).len() > 0 {
                let lc = self.bank.contrastive_loss(&mut tape, z, batch.style, batch.clean_index, self.config.tau)?;
                l_contra += tape.value(lc).item();
                seeds.push((lc, Tensor::scalar(1.0)));
            }
            if clean_ready && self.bank.total_entries() > 0 {
                let noise = tape.constant(sample_noise(self.field.config(), batch.noise_seed));
                let zg = self.field.generate_graph(&mut tape, &bound, noise)?;
                let lg = self.bank.generator_alignment_loss(&mut tape, zg, batch.clean_index, self.config.tau)?;
                l_contra += tape.value(lg).item();
                seeds.push((lg, Tensor::scalar(1.0)));
            }
            let mut g = tape.backward_with(seeds)?;
            if let Some(gp) = g.take(p) {
                for (d, s) in grads.get_mut(ParamClass::Position).iter_mut().zip(gp.data()) {
                    *d += s;
                }
            }
            if let Some(ge) = g.take(e) {
                grads.get_mut(ParamClass::Embedding).copy_from_slice(ge.data());
            }
            field_grads = bound.vars().iter().map(|v| g.take(*v)).collect();
            latent = Some(tape.value(z).data().to_vec());
        }

        for (name, v) in [("L_rec", l_rec), ("L_contra", l_contra), ("L_ucn", l_ucn)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: name.into() });
            }
        }
        let total = l_rec + l_contra + self.config.lambda_ucn * l_ucn;

        for (i, g) in rg.mean2d.iter().enumerate() {
            if g[0] != 0.0 || g[1] != 0.0 {
                let gx = g[0] * cam.width() as f64 / 2.0;
                let gy = g[1] * cam.height() as f64 / 2.0;
                self.grad_accum[i] += (gx * gx + gy * gy).sqrt();
                self.grad_count[i] += 1;
            }
        }

        let t = self.iteration + 1;
        for class in ParamClass::ALL {
            if !self.class_enabled(class) {
                continue;
            }
            let lr = self.class_lr(class);
            let mut values = class.gather(&self.scene);
            self.scene_moments[class as usize].step(&mut values, grads.get(class), lr, t);
            class.scatter(&mut self.scene, &values);
        }
        if variant.uaoo() && self.config.ucn_decoupled {
            let step = self.config.lr_opacity * self.config.lambda_ucn * self.config.ucn_sign;
            for g in &mut self.scene.gaussians {
                g.opacity_std_raw -= step * sigmoid(g.opacity_std_raw);
            }
        }
        for g in &mut self.scene.gaussians {
            g.normalize_rotation();
            g.clamp_scale();
        }
        let mut field_grad_norm2 = 0.0;
        if variant.neural_field() {
            let lr = self.config.lr_field;
            for ((k, (_, param)), grad) in self.field.params_mut().iter_mut().enumerate().zip(&field_grads) {
                if let Some(grad) = grad {
                    field_grad_norm2 += grad.data().iter().map(|x| x * x).sum::<f64>();
                    self.field_moments[k].step(param.data_mut(), grad.data(), lr, t);
                }
            }
            self.bank.push(batch.style, latent.as_deref().expect("latent recorded"))?;
            if let Some(img) = data.clean.get(batch.clean_image) {
                self.bank.push_clean(self.field.encode(img)?.z.data())?;
            }
        }
        self.iteration = t;

        let step_psnr = psnr(&out.composited.clamped(), target)?;
        Ok(StepReport {
            view: batch.view,
            style: batch.style,
            l_rec,
            l_contra,
            l_ucn,
            total,
            psnr: step_psnr,
            grads,
            field_grad_norm2,
        })
    }

    /// Samples a batch, steps, and runs the scheduled density control,
    /// opacity resets and logging.
    pub fn advance(&mut self, data: &SynthDataset) -> Result<StepReport> {
        let batch = self.next_batch(data);
        let report = self.train_step(data, &batch)?;
        let it = self.iteration as usize;
        let c = &self.config;
        if it >= c.densify_from && it <= c.densify_until && it.is_multiple_of(c.densify_interval) {
            self.densify_and_prune()?;
        }
        let c = &self.config;
        if c.variant.por() && it.is_multiple_of(c.por_interval) && it < c.iterations {
            self.reset_opacity();
        }
        for (w, v) in self.window.iter_mut().zip([report.l_rec, report.l_contra, report.l_ucn, report.psnr, 1.0]) {
            *w += v;
        }
        if it.is_multiple_of(self.config.log_interval) {
            let k = self.window[4];
            self.metrics.push(MetricsRow {
                iteration: self.iteration,
                l_rec: self.window[0] / k,
                l_contra: self.window[1] / k,
                l_ucn: self.window[2] / k,
                psnr: self.window[3] / k,
            });
            self.window = [0.0; 5];
        }
        Ok(report)
    }

    /// Trains until `iteration == config.iterations`.
    pub fn train_to_end(&mut self, data: &SynthDataset) -> Result<()> {
        while (self.iteration as usize) < self.config.iterations {
            self.advance(data)?;
        }
        Ok(())
    }

    /// Latent representing style `style`: the normalized mean of its queue.
    pub fn style_latent(&self, style: usize) -> Result<IlluminationLatent> {
        let mean = self.bank.style_mean(style)?;
        IlluminationLatent::from_unit(&mean, self.field.config(), Some(style), LatentSource::QueueMean)
    }

    /// Camera conditioning evaluation renders.
    pub fn cond_camera(&self) -> &Camera<f64> {
        &self.cameras[self.train_views[self.config.cond_camera]]
    }

    /// SH coefficients used to render style `style` at evaluation time.
    pub fn style_colors(&self, style: usize) -> Result<Vec<f64>> {
        if self.config.variant.neural_field() {
            let latent = self.style_latent(style)?;
            Ok(self.field.view_shared_colors(&self.scene, &latent, self.cond_camera())?.coeffs)
        } else {
            Ok(self.scene.sh_coefficients())
        }
    }

    /// Renders `camera` with the given SH coefficients in inference mode.
    pub fn render_with(&self, camera: &Camera<f64>, coeffs: &[f64]) -> Result<Image<f64>> {
        Ok(render(&self.scene, camera, ColorSource::Sh(coeffs), self.inference_mode(), BACKGROUND)?.composited)
    }

    /// Renders every camera from one latent. The field runs once; all views
    /// share the returned colors.
    pub fn render_views(
        &self,
        latent: &IlluminationLatent,
        cameras: &[Camera<f64>],
    ) -> Result<(ViewSharedColors, Vec<Image<f64>>)> {
        let colors = self.field.view_shared_colors(&self.scene, latent, self.cond_camera())?;
        let images = cameras.iter().map(|c| self.render_with(c, &colors.coeffs)).collect::<Result<_>>()?;
        Ok((colors, images))
    }

    /// Appearance-only opacity used for pruning.
    fn inference_opacity(&self, g: &GaussianPrimitive<f64>) -> f64 {
        if self.config.variant.uaoo() {
            opacity_expected(g.opacity_mean, g.opacity_std())
        } else {
            sigmoid(g.opacity_mean)
        }
    }

    pub fn scene_moments(&self, class: ParamClass) -> &Moments {
        &self.scene_moments[class as usize]
    }
}

/// Per-style PSNR and SSIM over `split`, each view rendered with that
/// style's colors in inference mode. A style whose queue is still empty is
/// represented by the encoding of its image at the conditioning view.
pub fn evaluate(state: &TrainState, data: &SynthDataset, split: Split) -> Result<EvalReport> {
    let views = data.views(split);
    if views.is_empty() {
        return Err(Error::Validation(format!("dataset has no {split:?} views")));
    }
    let mut rows = Vec::new();
    for style in 0..data.style_count() {
        let coeffs = if state.config.variant.neural_field() && state.bank.queue(style).len() == 0 {
            let cond = state.train_views[state.config.cond_camera];
            let latent = state.field.encode(data.image(cond, style))?;
            state.field.view_shared_colors(&state.scene, &latent, state.cond_camera())?.coeffs
        } else {
            state.style_colors(style)?
        };
        for &view in &views {
            let img = state.render_with(&data.cameras[view], &coeffs)?.clamped();
            let target = data.image(view, style);
            rows.push(EvalRow { view, style, psnr: psnr(&img, target)?, ssim: ssim(&img, target)? });
        }
    }
    rows.sort_by_key(|r| (r.view, r.style));
    let n = rows.len() as f64;
    Ok(EvalReport {
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
    })
}

/// Trains from scratch for `config.iterations` steps and evaluates the test
/// split.
pub fn run_training(config: TrainConfig, data: &SynthDataset) -> Result<TrainOutcome> {
    let mut state = TrainState::new(config, data)?;
    state.train_to_end(data)?;
    let heldout = evaluate(&state, data, Split::Test)?;
    Ok(TrainOutcome { state, heldout })
}

#[cfg(test)]
mod tests;
