//! Central finite-difference checks of every analytic gradient path.
//!
//! Each check perturbs one parameter element by `±step` and compares
//! `(L(+) - L(-)) / 2 step` with the analytic value. The renderer is only
//! piecewise smooth (blend cutoff, early stop, weight clamp), so an element
//! whose two perturbed renders differ in their blend-list structure is
//! skipped instead of compared.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{
    embeddings_tensor, positions_tensor, sample_noise, FieldConfig, FieldNetworks, LatentQueueBank, DEFAULT_TAU,
};
use crate::numerics::scalar::{sigmoid, softplus};
use crate::numerics::{Tape, Tensor};
use crate::render::{
    opacity_expected, opacity_expected_grad, opacity_train, opacity_train_grad, render_backward, render_traced,
    ColorSource, RenderMode, Upstream,
};
use crate::scene::{Camera, Image, Scene};
use crate::synth::random_scene;
use crate::train::{reconstruction_loss_with_grad, ParamClass, SceneGrads};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    /// Sampled and expected opacity as scalar functions.
    Opacity,
    /// Rasterizer backward pass in every opacity mode.
    Rasterizer,
    /// Encoder, decoder, color MLP and generator through the full training
    /// objective.
    Field,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Opacity, Suite::Rasterizer, Suite::Field];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Opacity => "opacity",
            Suite::Rasterizer => "rasterizer",
            Suite::Field => "field",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown gradient suite \"{s}\"")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest fraction of a parameter's elements that may be skipped.
    pub max_skip_fraction: f64,
    /// Tolerance of the stochastic-opacity ratio identity.
    pub ratio_tol: f64,
    /// Name of a check whose analytic gradient is deliberately scaled, for
    /// negative controls.
    pub corrupt: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            step: 1e-5,
            rel_tol: 1e-3,
            abs_tol: 1e-8,
            max_skip_fraction: 0.1,
            ratio_tol: 1e-10,
            corrupt: None,
        }
    }
}

/// Outcome for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub suite: Suite,
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Index of the worst element.
    pub worst: Option<usize>,
    pub passed: bool,
}

impl fmt::Display for ParamCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} checked={} skipped={} max_abs={:.3e} max_rel={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.skipped,
            self.max_abs_err,
            self.max_rel_err
        )?;
        if let (false, Some(i)) = (self.passed, self.worst) {
            write!(f, " worst_index={i}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Runs the requested suites.
pub fn run_gradcheck(suites: &[Suite], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(cfg.step > 0.0) || !(cfg.rel_tol >= 0.0) || !(cfg.abs_tol >= 0.0) {
        return Err(Error::Validation("gradient check step and tolerances must be positive".into()));
    }
    let mut report = GradCheckReport::default();
    for &suite in suites {
        let checks = match suite {
            Suite::Opacity => opacity_suite(cfg),
            Suite::Rasterizer => rasterizer_suite(cfg)?,
            Suite::Field => field_suite(cfg)?,
        };
        report.checks.extend(checks);
    }
    if let Some(name) = &cfg.corrupt {
        if report.get(name).is_none() {
            return Err(Error::Validation(format!("no gradient check named \"{name}\"")));
        }
    }
    Ok(report)
}

/// Loss value and blend-list active set of one perturbed evaluation.
type Probe = (f64, Vec<(u32, u32, bool)>);

/// Accumulates element comparisons for one parameter.
struct Checker<'a> {
    cfg: &'a GradCheckConfig,
    check: ParamCheck,
    corrupt: bool,
    total: usize,
}

impl<'a> Checker<'a> {
    fn new(cfg: &'a GradCheckConfig, suite: Suite, name: String) -> Self {
        let corrupt = cfg.corrupt.as_deref() == Some(name.as_str());
        Self {
            cfg,
            check: ParamCheck {
                suite,
                name,
                checked: 0,
                skipped: 0,
                max_abs_err: 0.0,
                max_rel_err: 0.0,
                worst: None,
                passed: true,
            },
            corrupt,
            total: 0,
        }
    }

    fn analytic(&self, a: f64) -> f64 {
        if self.corrupt {
            1.5 * a + 1e-3
        } else {
            a
        }
    }

    /// Compares against a central difference, or records a skip when
    /// `numeric` is `None`.
    fn element(&mut self, index: usize, analytic: f64, numeric: Option<f64>) {
        self.total += 1;
        let Some(n) = numeric else {
            self.check.skipped += 1;
            return;
        };
        let a = self.analytic(analytic);
        self.exact(index, a, n, self.cfg.abs_tol, self.cfg.rel_tol);
    }

    fn exact(&mut self, index: usize, a: f64, n: f64, abs_tol: f64, rel_tol: f64) {
        self.check.checked += 1;
        let err = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { err / scale } else { 0.0 };
        let ok = err <= abs_tol + rel_tol * scale;
        if err > self.check.max_abs_err || (!ok && self.check.passed) || !err.is_finite() {
            self.check.worst = Some(index);
        }
        self.check.max_abs_err = self.check.max_abs_err.max(err);
        self.check.max_rel_err = self.check.max_rel_err.max(rel);
        if !ok || !err.is_finite() {
            self.check.passed = false;
        }
    }

    fn finish(mut self) -> ParamCheck {
        if self.total == 0 || self.check.skipped as f64 > self.cfg.max_skip_fraction * self.total as f64 {
            self.check.passed = false;
        }
        self.check
    }
}

fn central(cfg: &GradCheckConfig, plus: Probe, minus: Probe) -> Option<f64> {
    (plus.1 == minus.1).then(|| (plus.0 - minus.0) / (2.0 * cfg.step))
}

const OPACITY_SAMPLES: usize = 64;

fn opacity_suite(cfg: &GradCheckConfig) -> Vec<ParamCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6f70);
    let samples: Vec<(f64, f64, f64)> = (0..OPACITY_SAMPLES)
        .map(|_| (rng.random_range(-4.0..4.0), rng.random_range(-3.0..2.0), rng.sample(StandardNormal)))
        .collect();
    let h = cfg.step;
    let name = |s: &str| format!("opacity/{s}");

    let mut mu = Checker::new(cfg, Suite::Opacity, name("sampled/mu"));
    let mut sigma = Checker::new(cfg, Suite::Opacity, name("sampled/sigma"));
    let mut raw = Checker::new(cfg, Suite::Opacity, name("sampled/sigma_raw"));
    let mut ratio = Checker::new(cfg, Suite::Opacity, name("sampled/ratio"));
    let mut emu = Checker::new(cfg, Suite::Opacity, name("expected/mu"));
    let mut esigma = Checker::new(cfg, Suite::Opacity, name("expected/sigma"));
    for (i, &(m, u, e)) in samples.iter().enumerate() {
        let s = softplus(u);
        let (dm, ds) = opacity_train_grad(m, s, e);
        let fd = |f: &dyn Fn(f64) -> f64, x: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        mu.element(i, dm, Some(fd(&|x| opacity_train(x, s, e), m)));
        sigma.element(i, ds, Some(fd(&|x| opacity_train(m, x, e), s)));
        raw.element(i, ds * sigmoid(u), Some(fd(&|x| opacity_train(m, softplus(x), e), u)));
        let r = ratio.analytic(ds) / dm;
        ratio.exact(i, r, e, 0.0, cfg.ratio_tol);
        ratio.total += 1;

        let (edm, eds) = opacity_expected_grad(m, s);
        emu.element(i, edm, Some(fd(&|x| opacity_expected(x, s), m)));
        esigma.element(i, eds, Some(fd(&|x| opacity_expected(m, x), s)));
    }
    vec![mu.finish(), sigma.finish(), raw.finish(), ratio.finish(), emu.finish(), esigma.finish()]
}

const SCENE_GAUSSIANS: usize = 5;
const SCENE_SIZE: usize = 16;

fn mode_name(mode: RenderMode) -> &'static str {
    match mode {
        RenderMode::TrainStochastic { .. } => "stochastic",
        RenderMode::InferenceExpected => "expected",
        RenderMode::DeterministicMean => "mean",
    }
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

fn rasterizer_suite(cfg: &GradCheckConfig) -> Result<Vec<ParamCheck>> {
    let (scene, cam) = random_scene(cfg.seed, SCENE_GAUSSIANS, 3, SCENE_SIZE, SCENE_SIZE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261);
    let pixels = SCENE_SIZE * SCENE_SIZE;
    let wc = random_weights(&mut rng, pixels * 3, 1.0 / pixels as f64);
    let wa = random_weights(&mut rng, pixels, 1.0 / pixels as f64);
    let background = [0.2, 0.5, 0.1];
    let noise_seed = cfg.seed.wrapping_add(17);

    let objective = |s: &Scene<f64>, mode: RenderMode| -> Result<Probe> {
        let coeffs = s.sh_coefficients();
        let (out, trace) = render_traced(s, &cam, ColorSource::Sh(&coeffs), mode, background)?;
        let l = dot(out.composited.data(), &wc) + dot(&out.alpha, &wa);
        Ok((l, trace.active_set()))
    };

    let mut checks = Vec::new();
    for mode in
        [RenderMode::TrainStochastic { seed: noise_seed }, RenderMode::InferenceExpected, RenderMode::DeterministicMean]
    {
        let coeffs = scene.sh_coefficients();
        let (_, trace) = render_traced(&scene, &cam, ColorSource::Sh(&coeffs), mode, background)?;
        let rg = render_backward(
            &trace,
            &scene,
            &cam,
            ColorSource::Sh(&coeffs),
            mode,
            Upstream { color: &wc, alpha: Some(&wa) },
        )?;
        let grads = SceneGrads::from_render(&scene, &rg);
        let prefix = format!("rasterizer/{}", mode_name(mode));
        for class in ParamClass::ALL {
            if class == ParamClass::Embedding {
                continue;
            }
            let c = check_scene_class(cfg, Suite::Rasterizer, &prefix, &scene, class, grads.get(class), |s| {
                objective(s, mode)
            })?;
            checks.push(c);
        }
        if let RenderMode::TrainStochastic { .. } = mode {
            let mut ratio = Checker::new(cfg, Suite::Rasterizer, format!("{prefix}/ratio"));
            let corrupt = ratio.corrupt;
            for (i, g) in scene.gaussians.iter().enumerate() {
                let dm = rg.opacity_mean[i];
                ratio.total += 1;
                if dm == 0.0 {
                    ratio.check.skipped += 1;
                    continue;
                }
                let mut ds = rg.opacity_std_raw[i] / sigmoid(g.opacity_std_raw);
                if corrupt {
                    ds = ratio.analytic(ds);
                }
                ratio.exact(i, ds / dm, trace.noise()[i], 0.0, cfg.ratio_tol);
            }
            // Gaussians outside the view legitimately have no gradient.
            ratio.check.skipped = 0;
            checks.push(ratio.finish());
        }
    }
    Ok(checks)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks every element of one scene parameter class against `objective`.
fn check_scene_class(
    cfg: &GradCheckConfig,
    suite: Suite,
    prefix: &str,
    scene: &Scene<f64>,
    class: ParamClass,
    analytic: &[f64],
    objective: impl Fn(&Scene<f64>) -> Result<Probe>,
) -> Result<ParamCheck> {
    let mut checker = Checker::new(cfg, suite, format!("{prefix}/{}", class.name()));
    let base = class.gather(scene);
    let mut probe = scene.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let mut values = base.clone();
        values[i] = base[i] + cfg.step;
        class.scatter(&mut probe, &values);
        let plus = objective(&probe)?;
        values[i] = base[i] - cfg.step;
        class.scatter(&mut probe, &values);
        let minus = objective(&probe)?;
        checker.element(i, a, central(cfg, plus, minus));
    }
    Ok(checker.finish())
}

/// Fixture for the field suite: a small network, a scene with embeddings,
/// a target image and a warmed latent bank.
struct FieldFixture {
    scene: Scene<f64>,
    cam: Camera<f64>,
    image: Image<f64>,
    target: Image<f64>,
    bank: LatentQueueBank,
    noise: Tensor,
    field: FieldNetworks,
    mode: RenderMode,
}

const FIELD_STYLE: usize = 1;
const FIELD_DSSIM: f64 = 0.2;

fn field_config() -> FieldConfig {
    FieldConfig {
        latent_channels: 4,
        latent_height: 2,
        latent_width: 2,
        feature_channels: 4,
        encoder_widths: [4, 4],
        decoder_widths: [4, 4, 4],
        hidden: 8,
        pe_bands: 2,
        sh_degree: 1,
        embed_dim: 2,
    }
}

fn field_fixture(cfg: &GradCheckConfig) -> Result<FieldFixture> {
    let fc = field_config();
    let (base, cam) = random_scene(cfg.seed.wrapping_add(1), SCENE_GAUSSIANS, fc.sh_degree, SCENE_SIZE, SCENE_SIZE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6669);
    let gaussians = base
        .gaussians
        .into_iter()
        .map(|mut g| {
            g.embedding = (0..fc.embed_dim).map(|_| rng.sample(StandardNormal)).collect();
            g
        })
        .collect();
    let scene = Scene::with_gaussians(fc.sh_degree, fc.embed_dim, gaussians)?;
    let pixels = SCENE_SIZE * SCENE_SIZE * 3;
    let image = Image::new(SCENE_SIZE, SCENE_SIZE, (0..pixels).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let target = Image::new(SCENE_SIZE, SCENE_SIZE, (0..pixels).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let mut bank = LatentQueueBank::new(3, 4, 2, fc.latent_len())?;
    for k in 0..6 {
        let v: Vec<f64> = (0..fc.latent_len()).map(|_| rng.sample(StandardNormal)).collect();
        bank.push(k % 3, &v)?;
    }
    for _ in 0..2 {
        let v: Vec<f64> = (0..fc.latent_len()).map(|_| rng.sample(StandardNormal)).collect();
        bank.push_clean(&v)?;
    }
    let mut field = FieldNetworks::new(fc.clone(), cfg.seed.wrapping_add(2))?;
    // A fresh color MLP has a zero output layer, which would hide every
    // upstream gradient; give it small random weights.
    for (name, t) in field.params_mut() {
        if name.starts_with("color_mlp") {
            for v in t.data_mut() {
                *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(FieldFixture {
        scene,
        cam,
        image,
        target,
        bank,
        noise: sample_noise(&fc, cfg.seed.wrapping_add(3)),
        field,
        mode: RenderMode::TrainStochastic { seed: cfg.seed.wrapping_add(4) },
    })
}

struct FieldGrads {
    scene: SceneGrads,
    field: Vec<Option<Tensor>>,
}

/// `L_rec + L_contra + L_align` through encoder, decoder, color MLP,
/// renderer and generator, with analytic gradients when `want_grad`.
fn field_objective(
    fx: &FieldFixture,
    field: &FieldNetworks,
    scene: &Scene<f64>,
    want_grad: bool,
) -> Result<(Probe, Option<FieldGrads>)> {
    let mut tape = Tape::new();
    let bound = field.bind(&mut tape, want_grad);
    let z = field.encode_graph(&mut tape, &bound, &fx.image)?;
    let f = field.decode_graph(&mut tape, &bound, z, fx.cam.height(), fx.cam.width())?;
    let p = tape.leaf(positions_tensor(scene)?.with_requires_grad(want_grad));
    let e = tape.leaf(embeddings_tensor(scene)?.with_requires_grad(want_grad));
    let v = field.residual_graph(&mut tape, &bound, f, p, e, &fx.cam);
    let mut coeffs = scene.sh_coefficients();
    for (c, r) in coeffs.iter_mut().zip(tape.value(v).data()) {
        *c += r;
    }
    let (out, trace) = render_traced(scene, &fx.cam, ColorSource::Sh(&coeffs), fx.mode, [0.0; 3])?;
    let (l_rec, d_img) = reconstruction_loss_with_grad(&out.composited, &fx.target, FIELD_DSSIM, want_grad)?;
    let lc = fx.bank.contrastive_loss(&mut tape, z, FIELD_STYLE, 0, DEFAULT_TAU)?;
    let noise = tape.constant(fx.noise.clone());
    let zg = field.generate_graph(&mut tape, &bound, noise)?;
    let lg = fx.bank.generator_alignment_loss(&mut tape, zg, 1, DEFAULT_TAU)?;
    let loss = l_rec + tape.value(lc).item() + tape.value(lg).item();
    let active = trace.active_set();
    if !want_grad {
        return Ok(((loss, active), None));
    }

    let d_img = d_img.expect("gradient requested");
    let rg = render_backward(
        &trace,
        scene,
        &fx.cam,
        ColorSource::Sh(&coeffs),
        fx.mode,
        Upstream { color: &d_img, alpha: None },
    )?;
    let mut sg = SceneGrads::from_render(scene, &rg);
    let seeds = vec![
        (v, Tensor::new([scene.len(), scene.sh_len()], rg.colors.clone())?),
        (lc, Tensor::scalar(1.0)),
        (lg, Tensor::scalar(1.0)),
    ];
    let mut g = tape.backward_with(seeds)?;
    if let Some(gp) = g.take(p) {
        for (d, s) in sg.get_mut(ParamClass::Position).iter_mut().zip(gp.data()) {
            *d += s;
        }
    }
    if let Some(ge) = g.take(e) {
        sg.get_mut(ParamClass::Embedding).copy_from_slice(ge.data());
    }
    let field_grads = bound.vars().iter().map(|v| g.take(*v)).collect();
    Ok(((loss, active), Some(FieldGrads { scene: sg, field: field_grads })))
}

fn field_suite(cfg: &GradCheckConfig) -> Result<Vec<ParamCheck>> {
    let fx = field_fixture(cfg)?;
    let (_, grads) = field_objective(&fx, &fx.field, &fx.scene, true)?;
    let grads = grads.expect("gradient requested");
    let mut checks = Vec::new();

    for (k, (name, tensor)) in fx.field.params().iter().enumerate() {
        let zeros;
        let analytic = match &grads.field[k] {
            Some(t) => t.data(),
            None => {
                zeros = vec![0.0; tensor.len()];
                &zeros
            }
        };
        let mut checker = Checker::new(cfg, Suite::Field, format!("field/{name}"));
        let mut probe = fx.field.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let x = tensor.data()[i];
            probe.params_mut()[k].1.data_mut()[i] = x + cfg.step;
            let (plus, _) = field_objective(&fx, &probe, &fx.scene, false)?;
            probe.params_mut()[k].1.data_mut()[i] = x - cfg.step;
            let (minus, _) = field_objective(&fx, &probe, &fx.scene, false)?;
            probe.params_mut()[k].1.data_mut()[i] = x;
            checker.element(i, a, central(cfg, plus, minus));
        }
        checks.push(checker.finish());
    }

    for class in [ParamClass::Position, ParamClass::Embedding, ParamClass::ShDc, ParamClass::ShRest] {
        let c = check_scene_class(cfg, Suite::Field, "field", &fx.scene, class, grads.scene.get(class), |s| {
            field_objective(&fx, &fx.field, s, false).map(|(probe, _)| probe)
        })?;
        checks.push(c);
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_by_default() {
        let report = run_gradcheck(&Suite::ALL, &GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "{report}");
        for c in &report.checks {
            assert!(c.checked > 0, "{c}");
        }
        for name in [
            "opacity/sampled/ratio",
            "rasterizer/stochastic/opacity_std_raw",
            "field/encoder.conv1.weight",
            "field/decoder.conv3.weight",
            "field/color_mlp.0.weight",
            "field/generator.conv5.weight",
            "field/embedding",
        ] {
            assert!(report.get(name).is_some(), "missing {name}");
        }
    }

    #[test]
    fn corrupted_gradient_is_reported_by_name() {
        for name in ["rasterizer/expected/rotation", "field/decoder.conv1.bias", "opacity/sampled/ratio"] {
            let cfg = GradCheckConfig { corrupt: Some(name.into()), ..Default::default() };
            let suite = name.split('/').next().unwrap().parse::<Suite>().unwrap();
            let report = run_gradcheck(&[suite], &cfg).unwrap();
            let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
            assert_eq!(failed, vec![name]);
            assert!(report.to_string().contains(&format!("FAIL {name}")));
        }
    }

    #[test]
    fn unknown_corruption_target_is_rejected() {
        let cfg = GradCheckConfig { corrupt: Some("nope".into()), ..Default::default() };
        assert!(matches!(run_gradcheck(&[Suite::Opacity], &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("FIELD".parse::<Suite>().is_ok());
        assert!("other".parse::<Suite>().is_err());
    }

    #[test]
    fn different_seeds_still_pass() {
        for seed in 1..4 {
            let cfg = GradCheckConfig { seed, ..Default::default() };
            let report = run_gradcheck(&[Suite::Opacity, Suite::Rasterizer], &cfg).unwrap();
            assert!(report.passed(), "seed {seed}\n{report}");
        }
    }
}
