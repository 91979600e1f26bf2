use super::*;
use crate::numerics::logit;
use crate::scene::GaussianPrimitive;
use crate::synth::random_scene;
use proptest::prelude::*;

const MODES: [RenderMode; 3] =
    [RenderMode::TrainStochastic { seed: 17 }, RenderMode::InferenceExpected, RenderMode::DeterministicMean];

fn identity_camera(w: usize, h: usize) -> Camera<f64> {
    let k = [[20.0, 0.0, (w as f64 - 1.0) / 2.0], [0.0, 20.0, (h as f64 - 1.0) / 2.0], [0.0, 0.0, 1.0]];
    Camera::new(k, mat::identity3(), [0.0; 3], w, h).unwrap()
}

#[test]
fn empty_scene_is_background() {
    let scene = Scene::<f64>::new(0, 0).unwrap();
    let out =
        render(&scene, &identity_camera(5, 4), ColorSource::Rgb(&[]), RenderMode::InferenceExpected, [0.2, 0.3, 0.4])
            .unwrap();
    assert!(out.alpha.iter().all(|a| *a == 0.0));
    assert_eq!(out.composited, Image::filled(5, 4, [0.2, 0.3, 0.4]));
    assert!(out.color.data().iter().all(|v| *v == 0.0));
}

#[test]
fn single_centered_gaussian() {
    let cam = identity_camera(5, 5);
    let bg = [0.1, 0.2, 0.3];
    let c = [0.9, 0.5, 0.1];
    for a in [0.3f64, 0.7, 0.995] {
        let mut g = GaussianPrimitive::new(0, 0);
        g.position = [0.0, 0.0, 2.0];
        g.log_scale = [(0.02f64).ln(); 3];
        g.opacity_mean = logit(a);
        let scene = Scene::with_gaussians(0, 0, vec![g]).unwrap();
        let out = render(&scene, &cam, ColorSource::Rgb(&[c]), RenderMode::DeterministicMean, bg).unwrap();
        let expect = a.min(MAX_BLEND);
        let p = 2 * 5 + 2;
        assert!((out.alpha[p] - expect).abs() < 1e-12);
        let rgb = out.composited.pixel(2, 2);
        for k in 0..3 {
            assert!((rgb[k] - (c[k] * expect + bg[k] * (1.0 - expect))).abs() < 1e-12);
        }
        assert_eq!(out.contrib_count[p], 1);
    }
}

#[test]
fn transparent_gaussians_leave_background_exactly() {
    let (mut scene, cam) = random_scene(3, 10, 1, 12, 12).unwrap();
    for g in &mut scene.gaussians {
        g.opacity_mean = -60.0;
        g.opacity_std_raw = -30.0;
    }
    let coeffs = scene.sh_coefficients();
    for mode in MODES {
        let out = render(&scene, &cam, ColorSource::Sh(&coeffs), mode, [0.25, 0.5, 0.75]).unwrap();
        assert_eq!(out.composited, Image::filled(12, 12, [0.25, 0.5, 0.75]));
        assert!(out.alpha.iter().all(|a| *a == 0.0));
    }
}

#[test]
fn stochastic_render_is_reproducible_and_expected_is_seed_free() {
    let (scene, cam) = random_scene(4, 12, 2, 16, 16).unwrap();
    let coeffs = scene.sh_coefficients();
    let r = |mode| render(&scene, &cam, ColorSource::Sh(&coeffs), mode, [0.0; 3]).unwrap();
    let a = r(RenderMode::TrainStochastic { seed: 5 });
    let b = r(RenderMode::TrainStochastic { seed: 5 });
    assert_eq!(a, b);
    assert_ne!(a, r(RenderMode::TrainStochastic { seed: 6 }));
    assert_eq!(r(RenderMode::InferenceExpected), r(RenderMode::InferenceExpected));
}

#[test]
fn matches_reference_renderer() {
    for seed in 0..6 {
        let (scene, cam) = random_scene(seed, 20, 2, 16, 16).unwrap();
        let coeffs = scene.sh_coefficients();
        for mode in MODES {
            let fast = render(&scene, &cam, ColorSource::Sh(&coeffs), mode, [0.1, 0.2, 0.3]).unwrap();
            let slow = render_reference(&scene, &cam, ColorSource::Sh(&coeffs), mode, [0.1, 0.2, 0.3]).unwrap();
            for (a, b) in fast.composited.data().iter().zip(slow.composited.data()) {
                assert!((a - b).abs() <= 2e-3, "seed {seed} {mode:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let (scene, cam) = random_scene(8, 10, 1, 16, 16).unwrap();
    let coeffs = scene.sh_coefficients();
    let a = render(&scene, &cam, ColorSource::Sh(&coeffs), RenderMode::InferenceExpected, [0.0; 3]).unwrap();
    let scene32 = scene.cast::<f32>();
    let coeffs32 = scene32.sh_coefficients();
    let b = render(&scene32, &cam.cast::<f32>(), ColorSource::Sh(&coeffs32), RenderMode::InferenceExpected, [0.0; 3])
        .unwrap();
    for (x, y) in a.composited.data().iter().zip(b.composited.data()) {
        assert!((x - *y as f64).abs() < 1e-3);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let (scene, cam) = random_scene(1, 5, 1, 16, 16).unwrap();
    let coeffs = scene.sh_coefficients();
    let src = ColorSource::Sh(&coeffs);
    let mode = RenderMode::TrainStochastic { seed: 3 };
    let (_, trace) = render_traced(&scene, &cam, src, mode, [0.0; 3]).unwrap();
    let zero = vec![0.0; 16 * 16 * 3];
    let g = render_backward(&trace, &scene, &cam, src, mode, Upstream { color: &zero, alpha: None }).unwrap();
    assert_eq!(g, RenderGrads::zeros(5, coeffs.len()));
}

#[test]
fn mode_mismatch_is_a_contract_error() {
    let (scene, cam) = random_scene(1, 5, 0, 8, 8).unwrap();
    let coeffs = scene.sh_coefficients();
    let src = ColorSource::Sh(&coeffs);
    let (_, trace) = render_traced(&scene, &cam, src, RenderMode::InferenceExpected, [0.0; 3]).unwrap();
    let up = vec![1.0; 8 * 8 * 3];
    let err =
        render_backward(&trace, &scene, &cam, src, RenderMode::DeterministicMean, Upstream { color: &up, alpha: None });
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn alpha_at_center_differentiates_to_sigmoid_slope() {
    let cam = identity_camera(5, 5);
    let mut g = GaussianPrimitive::new(0, 0);
    g.position = [0.0, 0.0, 2.0];
    g.log_scale = [(0.02f64).ln(); 3];
    g.opacity_mean = 0.4;
    let scene = Scene::with_gaussians(0, 0, vec![g]).unwrap();
    let rgb = [[0.5; 3]];
    let src = ColorSource::Rgb(&rgb);
    let mode = RenderMode::DeterministicMean;
    let (_, trace) = render_traced(&scene, &cam, src, mode, [0.0; 3]).unwrap();
    let zero = vec![0.0; 75];
    let mut d_alpha = vec![0.0; 25];
    d_alpha[12] = 1.0;
    let grads =
        render_backward(&trace, &scene, &cam, src, mode, Upstream { color: &zero, alpha: Some(&d_alpha) }).unwrap();
    assert!((grads.opacity_mean[0] - scalar::sigmoid_grad(0.4)).abs() < 1e-15);
    assert_eq!(grads.opacity_std_raw[0], 0.0);
}

#[test]
fn reference_trace_accessors() {
    let (scene, cam) = random_scene(2, 8, 0, 8, 8).unwrap();
    let coeffs = scene.sh_coefficients();
    let (out, trace) =
        render_traced(&scene, &cam, ColorSource::Sh(&coeffs), RenderMode::TrainStochastic { seed: 9 }, [0.0; 3])
            .unwrap();
    assert_eq!(trace.noise(), opacity_noise(9, 8).as_slice());
    assert_eq!(trace.blend_list(4, 4).count() as u32, out.contrib_count[4 * 8 + 4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn transmittance_is_nonincreasing_and_alpha_bounded(seed in 0u64..10_000, n in 1usize..25) {
        let (scene, cam) = random_scene(seed, n, 1, 12, 12).unwrap();
        let coeffs = scene.sh_coefficients();
        let (out, trace) = render_traced(&scene, &cam, ColorSource::Sh(&coeffs), RenderMode::TrainStochastic { seed }, [0.0; 3]).unwrap();
        prop_assert!(out.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        for y in 0..12 {
            for x in 0..12 {
                let t = trace.transmittance_profile(x, y);
                prop_assert!(t.windows(2).all(|w| w[1] <= w[0]));
                let list: Vec<usize> = trace.blend_list(x, y).collect();
                let depth = |i: usize| trace.projected[i].unwrap().depth;
                prop_assert!(list.windows(2).all(|w| depth(w[0]) <= depth(w[1])));
            }
        }
    }
}
