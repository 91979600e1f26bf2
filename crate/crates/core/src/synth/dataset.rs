//! Dataset generation and its directory layout:
//!
//! ```text
//! cameras.txt          all views, train and test
//! gt.scene             ground-truth scene
//! img_{j}_{m}.ppm      view j under style m (16-bit)
//! clean/img_{k}.ppm    renders of an unrelated scene without restyling
//! manifest.txt         generation parameters, view splits, style parameters
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{make_scene, make_styles, ring_cameras, StyleTransform};
use crate::error::{Error, Result};
use crate::render::{render, ColorSource, RenderMode};
use crate::scene::{
    read_camera_set, read_image, read_scene, write_camera_set, write_image, Camera, Image, PpmDepth, Scene,
    DEFAULT_EMBED_DIM, DEFAULT_SH_DEGREE,
};

/// Every test view sits at position `TEST_STRIDE * k + TEST_OFFSET` of the ring.
const TEST_STRIDE: usize = 7;
const TEST_OFFSET: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub gaussians: usize,
    pub train_views: usize,
    pub test_views: usize,
    /// Number of non-identity styles `M`.
    pub styles: usize,
    pub width: usize,
    pub height: usize,
    pub extent: f64,
    pub jitter: f64,
    pub clean_images: usize,
    pub sh_degree: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            gaussians: 200,
            train_views: 24,
            test_views: 4,
            styles: 3,
            width: 64,
            height: 64,
            extent: 1.0,
            jitter: 0.03,
            clean_images: 8,
            sh_degree: DEFAULT_SH_DEGREE,
            embed_dim: DEFAULT_EMBED_DIM,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub scene: Scene<f64>,
    pub cameras: Vec<Camera<f64>>,
    pub splits: Vec<Split>,
    pub styles: Vec<StyleTransform>,
    /// `images[j][m]`.
    pub images: Vec<Vec<Image<f64>>>,
    pub clean: Vec<Image<f64>>,
}

fn view_splits(train: usize, test: usize) -> Vec<Split> {
    let total = train + test;
    let mut splits = vec![Split::Train; total];
    let mut placed = 0;
    let mut j = TEST_OFFSET;
    while placed < test && j < total {
        splits[j] = Split::Test;
        placed += 1;
        j += TEST_STRIDE;
    }
    // any remainder goes at the end
    for s in splits.iter_mut().rev() {
        if placed == test {
            break;
        }
        if *s == Split::Train {
            *s = Split::Test;
            placed += 1;
        }
    }
    splits
}

/// Render seed for view `j`, style `m`.
fn image_rng(seed: u64, j: usize, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4c45);
    rng.set_stream(((j as u64) << 16) | m as u64);
    rng
}

pub fn ground_truth_render(scene: &Scene<f64>, cam: &Camera<f64>) -> Result<Image<f64>> {
    let coeffs = scene.sh_coefficients();
    Ok(render(scene, cam, ColorSource::Sh(&coeffs), RenderMode::DeterministicMean, [0.0; 3])?.composited)
}

/// Generates a dataset; a pure function of `spec`.
pub fn make_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    if spec.train_views == 0 || spec.width == 0 || spec.height == 0 {
        return Err(Error::Validation("dataset needs at least one training view and a non-empty image".into()));
    }
    let total = spec.train_views + spec.test_views;
    let cameras = ring_cameras(total, spec.width, spec.height, spec.extent, 0.0)?;
    let scene = make_scene(spec.gaussians, spec.extent, spec.sh_degree, spec.embed_dim, spec.seed, &cameras)?;
    let splits = view_splits(spec.train_views, spec.test_views);
    let styles = make_styles(spec.styles, spec.jitter, spec.seed.wrapping_add(1));
    let mut images = Vec::with_capacity(total);
    for (j, cam) in cameras.iter().enumerate() {
        let base = ground_truth_render(&scene, cam)?;
        let jitter = splits[j] == Split::Train;
        images.push(
            styles.iter().enumerate().map(|(m, s)| s.apply(&base, &mut image_rng(spec.seed, j, m), jitter)).collect(),
        );
    }
    let clean_cams = ring_cameras(spec.clean_images, spec.width, spec.height, spec.extent, 0.5)?;
    let clean_scene = if spec.clean_images > 0 {
        make_scene(spec.gaussians, spec.extent, spec.sh_degree, spec.embed_dim, spec.seed.wrapping_add(2), &clean_cams)?
    } else {
        scene.clone()
    };
    let clean = clean_cams.iter().map(|c| ground_truth_render(&clean_scene, c)).collect::<Result<_>>()?;
    Ok(SynthDataset { spec: spec.clone(), scene, cameras, splits, styles, images, clean })
}

impl SynthDataset {
    pub fn style_count(&self) -> usize {
        self.styles.len()
    }

    pub fn views(&self, split: Split) -> Vec<usize> {
        (0..self.cameras.len()).filter(|j| self.splits[*j] == split).collect()
    }

    pub fn image(&self, view: usize, style: usize) -> &Image<f64> {
        &self.images[view][style]
    }

    pub fn manifest(&self) -> String {
        let s = &self.spec;
        let mut out = String::from("# rsplat synthetic dataset\n");
        for (k, v) in [
            ("gaussians", s.gaussians.to_string()),
            ("train_views", s.train_views.to_string()),
            ("test_views", s.test_views.to_string()),
            ("styles", s.styles.to_string()),
            ("width", s.width.to_string()),
            ("height", s.height.to_string()),
            ("extent", format!("{:?}", s.extent)),
            ("jitter", format!("{:?}", s.jitter)),
            ("clean_images", s.clean_images.to_string()),
            ("sh_degree", s.sh_degree.to_string()),
            ("embed_dim", s.embed_dim.to_string()),
            ("seed", s.seed.to_string()),
        ] {
            writeln!(out, "{k} {v}").unwrap();
        }
        for (j, split) in self.splits.iter().enumerate() {
            let name = if *split == Split::Train { "train" } else { "test" };
            writeln!(out, "view {j} {name}").unwrap();
        }
        for st in &self.styles {
            writeln!(
                out,
                "style {} gain {:?} {:?} {:?} bias {:?} {:?} {:?} jitter {:?}",
                st.style_id, st.gain[0], st.gain[1], st.gain[2], st.bias[0], st.bias[1], st.bias[2], st.jitter
            )
            .unwrap();
        }
        out
    }

    /// Writes the directory layout into `dir` (created if missing).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("clean"))?;
        write_camera_set(dir.join("cameras.txt"), &self.cameras)?;
        crate::scene::write_scene(dir.join("gt.scene"), &self.scene)?;
        for (j, row) in self.images.iter().enumerate() {
            for (m, img) in row.iter().enumerate() {
                write_image(dir.join(format!("img_{j}_{m}.ppm")), img, PpmDepth::Sixteen)?;
            }
        }
        for (k, img) in self.clean.iter().enumerate() {
            write_image(dir.join("clean").join(format!("img_{k}.ppm")), img, PpmDepth::Sixteen)?;
        }
        std::fs::write(dir.join("manifest.txt"), self.manifest())?;
        Ok(())
    }

    /// Loads a directory written by [`SynthDataset::write`].
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut spec = SynthSpec::default();
        let mut splits = Vec::new();
        let mut styles = Vec::new();
        let bad = |line: &str| Error::Validation(format!("manifest: cannot parse line {line:?}"));
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| t.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| bad(line));
            let int = |i: usize| t.get(i).and_then(|v| v.parse::<u64>().ok()).ok_or_else(|| bad(line));
            match t[0] {
                "gaussians" => spec.gaussians = int(1)? as usize,
                "train_views" => spec.train_views = int(1)? as usize,
                "test_views" => spec.test_views = int(1)? as usize,
                "styles" => spec.styles = int(1)? as usize,
                "width" => spec.width = int(1)? as usize,
                "height" => spec.height = int(1)? as usize,
                "extent" => spec.extent = num(1)?,
                "jitter" => spec.jitter = num(1)?,
                "clean_images" => spec.clean_images = int(1)? as usize,
                "sh_degree" => spec.sh_degree = int(1)? as usize,
                "embed_dim" => spec.embed_dim = int(1)? as usize,
                "seed" => spec.seed = int(1)?,
                "view" => {
                    if int(1)? as usize != splits.len() {
                        return Err(bad(line));
                    }
                    splits.push(match t.get(2) {
                        Some(&"train") => Split::Train,
                        Some(&"test") => Split::Test,
                        _ => return Err(bad(line)),
                    });
                }
                "style" => {
                    if t.len() != 12 || t[2] != "gain" || t[6] != "bias" || t[10] != "jitter" {
                        return Err(bad(line));
                    }
                    styles.push(StyleTransform {
                        style_id: int(1)? as usize,
                        gain: [num(3)?, num(4)?, num(5)?],
                        bias: [num(7)?, num(8)?, num(9)?],
                        jitter: num(11)?,
                    });
                }
                _ => return Err(bad(line)),
            }
        }
        let cameras = read_camera_set(dir.join("cameras.txt"))?;
        if cameras.len() != splits.len() || cameras.len() != spec.train_views + spec.test_views {
            return Err(Error::Validation(format!(
                "dataset lists {} views but cameras.txt holds {} cameras",
                splits.len(),
                cameras.len()
            )));
        }
        if styles.len() != spec.styles + 1 {
            return Err(Error::Validation(format!(
                "manifest declares {} styles beyond identity but lists {}",
                spec.styles,
                styles.len()
            )));
        }
        let scene = read_scene(dir.join("gt.scene"))?;
        let mut images = Vec::with_capacity(cameras.len());
        for j in 0..cameras.len() {
            let mut row = Vec::with_capacity(styles.len());
            for m in 0..styles.len() {
                let img = read_image(dir.join(format!("img_{j}_{m}.ppm")))?;
                if img.width() != cameras[j].width() || img.height() != cameras[j].height() {
                    return Err(Error::Validation(format!("img_{j}_{m}.ppm does not match its camera size")));
                }
                row.push(img);
            }
            images.push(row);
        }
        let clean = (0..spec.clean_images)
            .map(|k| read_image(dir.join("clean").join(format!("img_{k}.ppm"))))
            .collect::<Result<_>>()?;
        Ok(Self { spec, scene, cameras, splits, styles, images, clean })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            gaussians: 60,
            train_views: 5,
            test_views: 2,
            styles: 2,
            width: 16,
            height: 16,
            clean_images: 2,
            jitter: 0.1,
            seed: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn splits_place_requested_test_views() {
        let s = view_splits(24, 4);
        assert_eq!(s.iter().filter(|v| **v == Split::Test).count(), 4);
        assert_eq!(s[3], Split::Test);
        assert_eq!(s[24], Split::Test);
        let s = view_splits(2, 3);
        assert_eq!(s.iter().filter(|v| **v == Split::Test).count(), 3);
    }

    #[test]
    fn style_zero_equals_ground_truth_and_generation_is_pure() {
        let spec = small_spec();
        let d = make_dataset(&spec).unwrap();
        for (j, cam) in d.cameras.iter().enumerate() {
            assert_eq!(d.image(j, 0), &ground_truth_render(&d.scene, cam).unwrap().clamped());
        }
        assert_eq!(d, make_dataset(&spec).unwrap());
        assert_eq!(d.images.len(), 7);
        assert!(d.images.iter().all(|r| r.len() == 3));
    }

    #[test]
    fn mean_shift_follows_affine_style() {
        let d = make_dataset(&small_spec()).unwrap();
        for m in 1..d.style_count() {
            let st = &d.styles[m];
            for c in 0..3 {
                let (mut shift, mut expect, mut n) = (0.0, 0.0, 0.0);
                for j in 0..d.cameras.len() {
                    for (a, b) in d
                        .image(j, m)
                        .data()
                        .iter()
                        .skip(c)
                        .step_by(3)
                        .zip(d.image(j, 0).data().iter().skip(c).step_by(3))
                    {
                        shift += a - b;
                        expect += ((st.gain[c] * b + st.bias[c]).clamp(0.0, 1.0)) - b;
                        n += 1.0;
                    }
                }
                assert!(((shift - expect) / n).abs() < 0.02, "style {m} channel {c}");
            }
        }
    }

    #[test]
    fn directory_round_trip() {
        let d = make_dataset(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let back = SynthDataset::read(dir.path()).unwrap();
        assert_eq!(back.spec, d.spec);
        assert_eq!(back.styles, d.styles);
        assert_eq!(back.splits, d.splits);
        assert_eq!(back.scene, d.scene);
        for (ra, rb) in d.images.iter().zip(&back.images) {
            for (a, b) in ra.iter().zip(rb) {
                assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 65535.0 + 1e-12));
            }
        }
        assert_eq!(back.clean.len(), 2);
    }
}
