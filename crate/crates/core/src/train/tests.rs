use super::*;
use crate::synth::{make_dataset, SynthSpec};
use std::sync::OnceLock;

fn tiny_data() -> &'static SynthDataset {
    static DATA: OnceLock<SynthDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        make_dataset(&SynthSpec {
            gaussians: 20,
            train_views: 6,
            test_views: 2,
            styles: 2,
            width: 16,
            height: 16,
            clean_images: 2,
            sh_degree: 1,
            embed_dim: 2,
            ..SynthSpec::default()
        })
        .unwrap()
    })
}

fn tiny_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        iterations: 20,
        variant,
        styles: 2,
        init_points: 30,
        latent_channels: 4,
        latent_height: 2,
        latent_width: 2,
        feature_channels: 4,
        sh_degree: 1,
        embed_dim: 2,
        densify_from: 5,
        densify_interval: 5,
        densify_until: 15,
        por_interval: 10,
        log_interval: 5,
        queue_capacity: 4,
        clean_capacity: 2,
        ..TrainConfig::default()
    }
}

fn steps(state: &mut TrainState, k: usize) {
    for _ in 0..k {
        state.advance(tiny_data()).unwrap();
    }
}

#[test]
fn identical_seeds_give_identical_states() {
    let mut a = TrainState::new(tiny_config(Variant::M6), tiny_data()).unwrap();
    let mut b = TrainState::new(tiny_config(Variant::M6), tiny_data()).unwrap();
    steps(&mut a, 10);
    steps(&mut b, 10);
    assert!(a == b);
    let mut c = TrainState::new(TrainConfig { seed: 1, ..tiny_config(Variant::M6) }, tiny_data()).unwrap();
    steps(&mut c, 10);
    assert!(a != c);
}

#[test]
fn m1_leaves_field_uncertainty_and_embeddings_untouched() {
    let mut s = TrainState::new(tiny_config(Variant::M1), tiny_data()).unwrap();
    let field = s.field.clone();
    let std: Vec<f64> = s.scene.gaussians.iter().map(|g| g.opacity_std_raw).collect();
    let emb: Vec<Vec<f64>> = s.scene.gaussians.iter().map(|g| g.embedding.clone()).collect();
    let pos = ParamClass::Position.gather(&s.scene);
    let batch = s.next_batch(tiny_data());
    let r = s.train_step(tiny_data(), &batch).unwrap();
    assert!(r.grads.is_zero(ParamClass::OpacityStd));
    assert!(r.grads.is_zero(ParamClass::Embedding));
    assert_eq!(r.field_grad_norm2, 0.0);
    assert_eq!(r.l_contra, 0.0);
    assert_eq!(r.l_ucn, 0.0);
    assert!(s.field == field);
    assert_eq!(s.scene.gaussians.iter().map(|g| g.opacity_std_raw).collect::<Vec<_>>(), std);
    assert_eq!(s.scene.gaussians.iter().map(|g| g.embedding.clone()).collect::<Vec<_>>(), emb);
    assert_ne!(ParamClass::Position.gather(&s.scene), pos);
    assert_eq!(s.bank.total_entries(), 0);
}

#[test]
fn neural_field_step_trains_networks_and_fills_queues() {
    let mut s = TrainState::new(tiny_config(Variant::M6), tiny_data()).unwrap();
    let field = s.field.clone();
    assert_eq!(s.bank.clean_pool().len(), 2);
    let b = s.next_batch(tiny_data());
    let r = s.train_step(tiny_data(), &b).unwrap();
    assert!(r.field_grad_norm2 > 0.0);
    // The zero output layer blocks gradient to the inputs on the first step.
    assert!(r.grads.is_zero(ParamClass::Embedding));
    assert!(!r.grads.is_zero(ParamClass::OpacityStd));
    assert!(s.field != field);
    assert_eq!(s.bank.queue(b.style).len(), 1);
    steps(&mut s, 8);
    assert!(s.bank.total_entries() > 1);
    let b = s.next_batch(tiny_data());
    let r = s.train_step(tiny_data(), &b).unwrap();
    assert!(!r.grads.is_zero(ParamClass::Embedding));
}

#[test]
fn loss_breakdown_adds_up() {
    let mut s = TrainState::new(tiny_config(Variant::M6), tiny_data()).unwrap();
    steps(&mut s, 6);
    let sigma: f64 = s.scene.gaussians.iter().map(|g| g.opacity_std()).sum();
    let b = s.next_batch(tiny_data());
    let r = s.train_step(tiny_data(), &b).unwrap();
    assert!((r.l_ucn + sigma).abs() < 1e-12);
    assert!((r.total - (r.l_rec + r.l_contra + 0.0005 * r.l_ucn)).abs() < 1e-12);
    assert!(r.l_contra > 0.0);
}

#[test]
fn checkpoint_round_trip_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = TrainState::new(tiny_config(Variant::M6), tiny_data()).unwrap();
    steps(&mut a, 7);
    a.save(dir.path()).unwrap();
    for f in CHECKPOINT_FILES {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let mut b = TrainState::load(dir.path()).unwrap();
    assert!(a == b);
    steps(&mut a, 6);
    steps(&mut b, 6);
    assert!(a == b);
    assert_eq!(a.metrics_csv(), b.metrics_csv());
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let init = TrainState::new(TrainConfig { iterations: 0, ..tiny_config(Variant::M6) }, tiny_data()).unwrap();
    let out = run_training(TrainConfig { iterations: 0, ..tiny_config(Variant::M6) }, tiny_data()).unwrap();
    assert!(out.state == init);
    assert!(out.state.metrics.is_empty());
    assert_eq!(out.heldout.rows.len(), 2 * 3);
}

#[test]
fn metrics_log_and_evaluation_shapes() {
    let out = run_training(tiny_config(Variant::M5), tiny_data()).unwrap();
    assert_eq!(out.state.metrics.len(), 20 / 5);
    assert_eq!(out.state.metrics_csv().lines().count(), 1 + 4);
    assert!(out.state.metrics.iter().all(|r| r.l_rec.is_finite() && r.psnr > 0.0));
    let csv = out.heldout.to_csv();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 + 1);
    let view = tiny_data().views(Split::Test)[1];
    let manual = {
        let img = out.state.render_with(&tiny_data().cameras[view], &out.state.scene.sh_coefficients()).unwrap();
        psnr(&img.clamped(), tiny_data().image(view, 1)).unwrap()
    };
    let row = out.heldout.rows.iter().find(|r| r.view == view && r.style == 1).unwrap();
    assert_eq!(row.psnr, manual);
}

#[test]
fn dataset_mismatch_is_rejected() {
    let err = TrainState::new(TrainConfig { styles: 3, ..tiny_config(Variant::M6) }, tiny_data()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn densify_without_large_gradients_only_prunes() {
    let mut s = TrainState::new(tiny_config(Variant::M5), tiny_data()).unwrap();
    steps(&mut s, 3);
    s.config.densify_grad_threshold = f64::INFINITY;
    s.scene.gaussians[0].opacity_mean = -20.0;
    let n = s.scene.len();
    let (cloned, split, pruned) = s.densify_and_prune().unwrap();
    assert_eq!((cloned, split), (0, 0));
    assert!(pruned >= 1);
    assert_eq!(s.scene.len(), n - pruned);
    assert_eq!(s.scene_moments(ParamClass::ShRest).len(), s.scene.len() * 9);
}

#[test]
fn clone_copies_every_field_and_split_shrinks() {
    let mut s = TrainState::new(tiny_config(Variant::M6), tiny_data()).unwrap();
    s.config.densify_grad_threshold = 1.0;
    s.scene.gaussians[0].log_scale = [-8.0; 3];
    s.scene.gaussians[1].log_scale = [0.0; 3];
    s.scene.gaussians[0].opacity_std_raw = 0.3;
    s.grad_accum[0] = 2.0;
    s.grad_count[0] = 1;
    s.grad_accum[1] = 2.0;
    s.grad_count[1] = 1;
    let g0 = s.scene.gaussians[0].clone();
    let g1 = s.scene.gaussians[1].clone();
    let n = s.scene.len();
    let (cloned, split, pruned) = s.densify_and_prune().unwrap();
    assert_eq!((cloned, split, pruned), (1, 1, 0));
    assert_eq!(s.scene.len(), n + 2);
    assert_eq!(s.scene.gaussians[0], g0);
    assert_eq!(s.scene.gaussians[n - 1], g0);
    for child in &s.scene.gaussians[n..] {
        assert!((child.log_scale[0] + 1.6f64.ln()).abs() < 1e-12);
        assert_eq!(child.sh, g1.sh);
        assert_eq!(child.opacity_mean, g1.opacity_mean);
    }
    assert!(s.grad_accum.iter().all(|v| *v == 0.0));
}

#[test]
fn opacity_reset_caps_means_and_keeps_uncertainty() {
    let mut s = TrainState::new(tiny_config(Variant::M4), tiny_data()).unwrap();
    for g in &mut s.scene.gaussians {
        g.opacity_mean = 3.0;
    }
    let std: Vec<f64> = s.scene.gaussians.iter().map(|g| g.opacity_std_raw).collect();
    s.reset_opacity();
    for (g, raw) in s.scene.gaussians.iter().zip(std) {
        assert_eq!(g.opacity_std_raw, raw);
        assert!(
            opacity_expected(g.opacity_mean, g.opacity_std()) <= opacity_expected(logit(0.01), g.opacity_std()) + 1e-15
        );
        assert!(sigmoid(g.opacity_mean) <= 0.01 + 1e-15);
    }
}

#[test]
fn scheduled_resets_follow_the_variant() {
    let mut por = TrainState::new(tiny_config(Variant::M4), tiny_data()).unwrap();
    let mut none = TrainState::new(tiny_config(Variant::M5), tiny_data()).unwrap();
    steps(&mut por, 10);
    steps(&mut none, 10);
    assert!(por.scene.gaussians.iter().all(|g| sigmoid(g.opacity_mean) <= 0.01 + 1e-12));
    assert!(none.scene.gaussians.iter().any(|g| sigmoid(g.opacity_mean) > 0.011));
}
