//! Per-Gaussian parameter classes, each with its own learning rate.

use crate::render::RenderGrads;
use crate::scene::{GaussianPrimitive, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamClass {
    Position,
    Rotation,
    LogScale,
    OpacityMean,
    OpacityStd,
    /// First SH band.
    ShDc,
    /// Remaining SH bands.
    ShRest,
    Embedding,
}

impl ParamClass {
    pub const ALL: [ParamClass; 8] = [
        ParamClass::Position,
        ParamClass::Rotation,
        ParamClass::LogScale,
        ParamClass::OpacityMean,
        ParamClass::OpacityStd,
        ParamClass::ShDc,
        ParamClass::ShRest,
        ParamClass::Embedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Position => "position",
            ParamClass::Rotation => "rotation",
            ParamClass::LogScale => "log_scale",
            ParamClass::OpacityMean => "opacity_mean",
            ParamClass::OpacityStd => "opacity_std_raw",
            ParamClass::ShDc => "sh_dc",
            ParamClass::ShRest => "sh_rest",
            ParamClass::Embedding => "embedding",
        }
    }

    /// Values per Gaussian.
    pub fn width(self, scene: &Scene<f64>) -> usize {
        match self {
            ParamClass::Position | ParamClass::LogScale | ParamClass::ShDc => 3,
            ParamClass::Rotation => 4,
            ParamClass::OpacityMean | ParamClass::OpacityStd => 1,
            ParamClass::ShRest => scene.sh_len() - 3,
            ParamClass::Embedding => scene.embed_dim(),
        }
    }

    pub fn read(self, g: &GaussianPrimitive<f64>) -> &[f64] {
        match self {
            ParamClass::Position => &g.position,
            ParamClass::Rotation => &g.rotation,
            ParamClass::LogScale => &g.log_scale,
            ParamClass::OpacityMean => std::slice::from_ref(&g.opacity_mean),
            ParamClass::OpacityStd => std::slice::from_ref(&g.opacity_std_raw),
            ParamClass::ShDc => &g.sh[..3],
            ParamClass::ShRest => &g.sh[3..],
            ParamClass::Embedding => &g.embedding,
        }
    }

    pub fn write(self, g: &mut GaussianPrimitive<f64>) -> &mut [f64] {
        match self {
            ParamClass::Position => &mut g.position,
            ParamClass::Rotation => &mut g.rotation,
            ParamClass::LogScale => &mut g.log_scale,
            ParamClass::OpacityMean => std::slice::from_mut(&mut g.opacity_mean),
            ParamClass::OpacityStd => std::slice::from_mut(&mut g.opacity_std_raw),
            ParamClass::ShDc => &mut g.sh[..3],
            ParamClass::ShRest => &mut g.sh[3..],
            ParamClass::Embedding => &mut g.embedding,
        }
    }

    pub fn gather(self, scene: &Scene<f64>) -> Vec<f64> {
        scene.gaussians.iter().flat_map(|g| self.read(g).iter().copied()).collect()
    }

    pub fn scatter(self, scene: &mut Scene<f64>, values: &[f64]) {
        let w = self.width(scene);
        if w == 0 {
            return;
        }
        for (g, v) in scene.gaussians.iter_mut().zip(values.chunks_exact(w)) {
            self.write(g).copy_from_slice(v);
        }
    }
}

/// Flat gradients for every class, in [`ParamClass::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads {
    pub classes: Vec<Vec<f64>>,
}

impl SceneGrads {
    pub fn zeros(scene: &Scene<f64>) -> Self {
        Self { classes: ParamClass::ALL.iter().map(|c| vec![0.0; c.width(scene) * scene.len()]).collect() }
    }

    pub fn get(&self, class: ParamClass) -> &[f64] {
        &self.classes[class as usize]
    }

    pub fn get_mut(&mut self, class: ParamClass) -> &mut [f64] {
        &mut self.classes[class as usize]
    }

    /// Adds a full SH gradient (`3 (D+1)^2` per Gaussian).
    pub fn add_sh(&mut self, sh_len: usize, grad: &[f64]) {
        let n = grad.len() / sh_len.max(1);
        for i in 0..n {
            let row = &grad[i * sh_len..(i + 1) * sh_len];
            for (d, g) in self.classes[ParamClass::ShDc as usize][i * 3..(i + 1) * 3].iter_mut().zip(&row[..3]) {
                *d += g;
            }
            let r = sh_len - 3;
            for (d, g) in self.classes[ParamClass::ShRest as usize][i * r..(i + 1) * r].iter_mut().zip(&row[3..]) {
                *d += g;
            }
        }
    }

    /// Gradients of every class from a render backward pass over SH colors.
    pub fn from_render(scene: &Scene<f64>, rg: &RenderGrads<f64>) -> Self {
        let mut g = Self::zeros(scene);
        g.get_mut(ParamClass::Position).copy_from_slice(rg.position.as_flattened());
        g.get_mut(ParamClass::Rotation).copy_from_slice(rg.rotation.as_flattened());
        g.get_mut(ParamClass::LogScale).copy_from_slice(rg.log_scale.as_flattened());
        g.get_mut(ParamClass::OpacityMean).copy_from_slice(&rg.opacity_mean);
        g.get_mut(ParamClass::OpacityStd).copy_from_slice(&rg.opacity_std_raw);
        g.add_sh(scene.sh_len(), &rg.colors);
        g
    }

    pub fn is_zero(&self, class: ParamClass) -> bool {
        self.get(class).iter().all(|v| *v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_scatter_round_trip() {
        let mut scene = Scene::new(1, 2).unwrap();
        for i in 0..3 {
            let mut g = GaussianPrimitive::new(1, 2);
            g.position = [i as f64, 1.0, 2.0];
            g.sh = (0..12).map(|k| (i * 12 + k) as f64).collect();
            g.embedding = vec![i as f64; 2];
            scene.push(g).unwrap();
        }
        for c in ParamClass::ALL {
            let v = c.gather(&scene);
            assert_eq!(v.len(), c.width(&scene) * 3);
            let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
            let mut s = scene.clone();
            c.scatter(&mut s, &doubled);
            assert_eq!(c.gather(&s), doubled);
        }
        let mut grads = SceneGrads::zeros(&scene);
        let full = scene.sh_coefficients();
        grads.add_sh(12, &full);
        assert_eq!(grads.get(ParamClass::ShDc), ParamClass::ShDc.gather(&scene));
        assert_eq!(grads.get(ParamClass::ShRest), ParamClass::ShRest.gather(&scene));
        assert!(grads.is_zero(ParamClass::Position));
    }
}
