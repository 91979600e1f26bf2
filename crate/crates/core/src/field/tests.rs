use super::*;
use crate::synth::random_scene;

fn small_config(sh_degree: usize, embed_dim: usize) -> FieldConfig {
    FieldConfig {
        latent_channels: 4,
        latent_height: 2,
        latent_width: 2,
        feature_channels: 4,
        encoder_widths: [4, 4],
        decoder_widths: [4, 4, 4],
        hidden: 8,
        pe_bands: 2,
        sh_degree,
        embed_dim,
    }
}

fn gradient_image(w: usize, h: usize) -> Image<f64> {
    let mut data = Vec::new();
    for y in 0..h {
        for x in 0..w {
            data.extend([x as f64 / w as f64, y as f64 / h as f64, 0.5]);
        }
    }
    Image::new(w, h, data).unwrap()
}

#[test]
fn default_shapes() {
    let cfg = FieldConfig::default();
    assert_eq!(cfg.latent_len(), 24 * 8 * 8);
    assert_eq!(cfg.sh_len(), 48);
    assert_eq!(cfg.mlp_input(), 16 + 8 + 27);
    let net = FieldNetworks::new(cfg.clone(), 0).unwrap();
    assert_eq!(net.params().len(), 30);
    let z = net.encode(&gradient_image(32, 24)).unwrap();
    assert_eq!(z.z.shape(), &[24, 8, 8]);
    let norm: f64 = z.z.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - (cfg.latent_len() as f64).sqrt()).abs() < 1e-9);
    let f = net.decode(&z, 24, 32).unwrap();
    assert_eq!(f.shape(), &[16, 24, 32]);
    let g = net.generate_latent(&sample_noise(&cfg, 3)).unwrap();
    assert_eq!(g.source, LatentSource::Generator);
    assert!((cosine(&g, &g) - 1.0).abs() < 1e-12);
}

#[test]
fn encoder_rejects_indivisible_size() {
    let net = FieldNetworks::new(small_config(1, 2), 0).unwrap();
    assert!(matches!(net.encode(&gradient_image(20, 16)), Err(Error::Shape(_))));
    assert!(net.encode(&gradient_image(24, 16)).is_ok());
}

#[test]
fn construction_is_deterministic() {
    let a = FieldNetworks::new(small_config(1, 2), 7).unwrap();
    let b = FieldNetworks::new(small_config(1, 2), 7).unwrap();
    let c = FieldNetworks::new(small_config(1, 2), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let img = gradient_image(16, 16);
    assert_eq!(a.encode(&img).unwrap(), b.encode(&img).unwrap());
}

#[test]
fn fresh_residual_is_zero() {
    let (scene, cam) = random_scene(1, 5, 1, 16, 16).unwrap();
    let mut scene = scene;
    for g in &mut scene.gaussians {
        g.embedding = vec![0.1, -0.2];
    }
    let scene = Scene::with_gaussians(1, 2, scene.gaussians).unwrap();
    let net = FieldNetworks::new(small_config(1, 2), 0).unwrap();
    let z = net.generate_latent(&sample_noise(net.config(), 1)).unwrap();
    let colors = net.view_shared_colors(&scene, &z, &cam).unwrap();
    assert_eq!(colors.coeffs, scene.sh_coefficients());
}

#[test]
fn residual_equals_output_bias_when_weights_vanish() {
    let (scene, cam) = random_scene(2, 5, 1, 16, 16).unwrap();
    let scene = Scene::with_gaussians(
        1,
        2,
        scene
            .gaussians
            .into_iter()
            .map(|mut g| {
                g.embedding = vec![0.0; 2];
                g
            })
            .collect(),
    )
    .unwrap();
    let mut net = FieldNetworks::new(small_config(1, 2), 0).unwrap();
    let bias: Vec<f64> = (0..12).map(|i| i as f64 * 0.01).collect();
    for (name, t) in net.params_mut() {
        if name == "color_mlp.2.bias" {
            t.data_mut().copy_from_slice(&bias);
        }
    }
    let z = net.encode(&gradient_image(16, 16)).unwrap();
    let colors = net.view_shared_colors(&scene, &z, &cam).unwrap();
    let base = scene.sh_coefficients();
    for (i, (c, b)) in colors.coeffs.iter().zip(&base).enumerate() {
        assert!((c - b - bias[i % 12]).abs() < 1e-15);
    }
}

#[test]
fn colors_depend_only_on_latent_and_conditioning_camera() {
    let (scene, cam) = random_scene(3, 8, 1, 16, 16).unwrap();
    let scene = Scene::with_gaussians(
        1,
        2,
        scene
            .gaussians
            .into_iter()
            .enumerate()
            .map(|(i, mut g)| {
                g.embedding = vec![i as f64 * 0.1, 0.3];
                g
            })
            .collect(),
    )
    .unwrap();
    let mut net = FieldNetworks::new(small_config(1, 2), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dist = Uniform::new(-0.3, 0.3).unwrap();
    for (_, t) in net.params_mut() {
        for v in t.data_mut() {
            if *v == 0.0 {
                *v = dist.sample(&mut rng);
            }
        }
    }
    let z = net.encode(&gradient_image(16, 16)).unwrap();
    net.reset_evaluations();
    let a = net.view_shared_colors(&scene, &z, &cam).unwrap();
    let b = net.view_shared_colors(&scene, &z, &cam).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.coeffs, scene.sh_coefficients());
    assert_eq!(net.evaluations(), 2);
    let other = net.generate_latent(&sample_noise(net.config(), 4)).unwrap();
    let c = net.view_shared_colors(&scene, &other, &cam).unwrap();
    assert_ne!(a.digest(), c.digest());
    assert_eq!(a.digest().len(), 64);
}

#[test]
fn shape_contracts() {
    let net = FieldNetworks::new(small_config(1, 2), 0).unwrap();
    let bad = IlluminationLatent { z: Tensor::zeros([3, 2, 2]), style_id: None, source: LatentSource::Encoder };
    assert!(matches!(net.decode(&bad, 16, 16), Err(Error::Shape(_))));
    assert!(matches!(net.generate_latent(&Tensor::zeros([4, 3, 2])), Err(Error::Shape(_))));
    let (scene, cam) = random_scene(0, 3, 2, 16, 16).unwrap();
    let z = net.encode(&gradient_image(16, 16)).unwrap();
    assert!(matches!(net.view_shared_colors(&scene, &z, &cam), Err(Error::Shape(_))));
    assert!(IlluminationLatent::from_unit(&[1.0; 3], net.config(), None, LatentSource::QueueMean).is_err());
}

#[test]
fn load_params_checks_names_and_shapes() {
    let mut a = FieldNetworks::new(small_config(1, 2), 0).unwrap();
    let b = FieldNetworks::new(small_config(1, 2), 1).unwrap();
    a.load_params(b.params().to_vec()).unwrap();
    assert_eq!(a, b);
    let mut wrong = b.params().to_vec();
    wrong[0].0 = "encoder.other".into();
    assert!(a.load_params(wrong).is_err());
    assert!(a.load_params(b.params()[1..].to_vec()).is_err());
}
