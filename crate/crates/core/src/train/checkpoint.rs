//! Checkpoint directory:
//!
//! ```text
//! scene.gs       scene file
//! networks.bin   archive of named network tensors
//! optimizer.bin  archive of Adam moments, iteration, RNG position, latent
//!                queues, densification statistics and logged metrics
//! config.txt     training configuration
//! cameras.txt    every dataset camera
//! metrics.csv    logged metrics
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MetricsRow, Moments, ParamClass, TrainConfig, TrainState};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::field::{FieldNetworks, LatentQueueBank};
use crate::numerics::Tensor;
use crate::scene::{read_camera_set, read_scene, write_camera_set, write_scene};

pub const CHECKPOINT_FILES: [&str; 6] =
    ["scene.gs", "networks.bin", "optimizer.bin", "config.txt", "cameras.txt", "metrics.csv"];
pub const METRICS_HEADER: &str = "iteration,l_rec,l_contra,l_ucn,psnr";

fn rng_words(rng: &ChaCha8Rng) -> Vec<u64> {
    let seed = rng.get_seed();
    let mut words: Vec<u64> =
        seed.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let pos = rng.get_word_pos();
    words.extend([rng.get_stream(), pos as u64, (pos >> 64) as u64]);
    words
}

fn rng_from_words(words: &[u64]) -> Result<ChaCha8Rng> {
    if words.len() != 7 {
        return Err(Error::Validation("corrupt RNG record".into()));
    }
    let mut seed = [0u8; 32];
    for (c, w) in seed.chunks_exact_mut(8).zip(words) {
        c.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words[4]);
    rng.set_word_pos(words[5] as u128 | (words[6] as u128) << 64);
    Ok(rng)
}

impl TrainState {
    /// Metrics log as CSV text.
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.metrics {
            out.push_str(&format!("{},{:.9},{:.9},{:.9},{:.6}\n", r.iteration, r.l_rec, r.l_contra, r.l_ucn, r.psnr));
        }
        out
    }

    fn optimizer_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.push_words("iteration", vec![self.iteration]);
        a.push_words("rng", rng_words(&self.rng));
        a.push_words("train_views", self.train_views.iter().map(|v| *v as u64).collect());
        a.push_values("spatial_extent", vec![self.spatial_extent]);
        for class in ParamClass::ALL {
            let m = &self.scene_moments[class as usize];
            a.push_values(format!("scene.{}.m", class.name()), m.m.clone());
            a.push_values(format!("scene.{}.v", class.name()), m.v.clone());
        }
        for ((name, _), m) in self.field.params().iter().zip(&self.field_moments) {
            a.push_values(format!("field.{name}.m"), m.m.clone());
            a.push_values(format!("field.{name}.v"), m.v.clone());
        }
        a.push_values("densify.grad_accum", self.grad_accum.clone());
        a.push_words("densify.grad_count", self.grad_count.clone());
        let (counts, data) = self.bank.to_parts();
        a.push_words("queues.counts", counts);
        a.push_values("queues.data", data);
        let rows: Vec<f64> =
            self.metrics.iter().flat_map(|r| [r.iteration as f64, r.l_rec, r.l_contra, r.l_ucn, r.psnr]).collect();
        a.push_tensor("metrics", Tensor::new([self.metrics.len(), 5], rows).expect("metrics shape"));
        a.push_values("metrics.window", self.window.to_vec());
        a
    }

    /// Writes the checkpoint files into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_scene(dir.join("scene.gs"), &self.scene)?;
        let mut nets = Archive::new();
        for (name, t) in self.field.params() {
            nets.push_tensor(name.clone(), t.clone());
        }
        nets.write(dir.join("networks.bin"))?;
        self.optimizer_archive().write(dir.join("optimizer.bin"))?;
        fs::write(dir.join("config.txt"), self.config.render())?;
        write_camera_set(dir.join("cameras.txt"), &self.cameras)?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        Ok(())
    }

    /// Restores a state written by [`TrainState::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config = TrainConfig::read(dir.join("config.txt"))?;
        let scene = read_scene(dir.join("scene.gs"))?;
        if scene.sh_degree() != config.sh_degree || scene.embed_dim() != config.embed_dim {
            return Err(Error::Validation("scene file does not match the configuration".into()));
        }
        let mut field = FieldNetworks::new(config.field_config(), 0)?;
        let nets = Archive::read(dir.join("networks.bin"))?;
        let params = field
            .params()
            .iter()
            .map(|(name, _)| Ok((name.clone(), nets.tensor(name)?.clone())))
            .collect::<Result<Vec<_>>>()?;
        field.load_params(params)?;
        let opt = Archive::read(dir.join("optimizer.bin"))?;
        let cameras = read_camera_set(dir.join("cameras.txt"))?;
        let n = scene.len();
        let moments = |prefix: String, len: usize| -> Result<Moments> {
            let m = opt.values(&format!("{prefix}.m"))?.to_vec();
            let v = opt.values(&format!("{prefix}.v"))?.to_vec();
            if m.len() != len || v.len() != len {
                return Err(Error::Validation(format!("{prefix} moments have the wrong length")));
            }
            Ok(Moments { m, v })
        };
        let scene_moments = ParamClass::ALL
            .iter()
            .map(|c| moments(format!("scene.{}", c.name()), c.width(&scene) * n))
            .collect::<Result<Vec<_>>>()?;
        let field_moments = field
            .params()
            .iter()
            .map(|(name, t)| moments(format!("field.{name}"), t.len()))
            .collect::<Result<Vec<_>>>()?;
        let grad_accum = opt.values("densify.grad_accum")?.to_vec();
        let grad_count = opt.words("densify.grad_count")?.to_vec();
        if grad_accum.len() != n || grad_count.len() != n {
            return Err(Error::Validation("densification statistics do not match the scene".into()));
        }
        let bank = LatentQueueBank::from_parts(opt.words("queues.counts")?, opt.values("queues.data")?)?;
        let metrics_t = opt.tensor("metrics")?;
        let metrics = metrics_t
            .data()
            .chunks_exact(5)
            .map(|r| MetricsRow { iteration: r[0] as u64, l_rec: r[1], l_contra: r[2], l_ucn: r[3], psnr: r[4] })
            .collect();
        let window: [f64; 5] =
            opt.values("metrics.window")?.try_into().map_err(|_| Error::Validation("corrupt metrics window".into()))?;
        let train_views: Vec<usize> = opt.words("train_views")?.iter().map(|v| *v as usize).collect();
        if train_views.iter().any(|v| *v >= cameras.len()) || config.cond_camera >= train_views.len() {
            return Err(Error::Validation("training views do not match the camera set".into()));
        }
        let iteration =
            *opt.words("iteration")?.first().ok_or_else(|| Error::Validation("missing iteration".into()))?;
        let spatial_extent =
            *opt.values("spatial_extent")?.first().ok_or_else(|| Error::Validation("missing spatial extent".into()))?;
        Ok(Self {
            config,
            scene,
            field,
            bank,
            cameras,
            train_views,
            spatial_extent,
            iteration,
            metrics,
            rng: rng_from_words(opt.words("rng")?)?,
            scene_moments,
            field_moments,
            grad_accum,
            grad_count,
            window,
        })
    }
}
