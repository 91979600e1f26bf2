//! Clone/split densification, opacity pruning and periodic opacity resets.

use rand_distr::{Distribution, StandardNormal};

use super::{Moments, ParamClass, TrainState};
use crate::error::Result;
use crate::numerics::logit;
use crate::scene::{rotation_from_quaternion, GaussianPrimitive};

/// Scale divisor applied to both children of a split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
/// Opacity that resets clamp every Gaussian down to.
pub const RESET_OPACITY: f64 = 0.01;

impl TrainState {
    /// Rebuilds the scene from `next`, where `origin[k]` names the Gaussian
    /// whose optimizer moments the `k`-th new Gaussian keeps.
    fn replace_gaussians(&mut self, next: Vec<GaussianPrimitive<f64>>, origin: Vec<Option<usize>>) {
        for class in ParamClass::ALL {
            let w = class.width(&self.scene);
            let src = &self.scene_moments[class as usize];
            let mut dst = Moments::zeros(w * next.len());
            for (k, o) in origin.iter().enumerate() {
                if let Some(i) = o {
                    dst.m[k * w..(k + 1) * w].copy_from_slice(&src.m[i * w..(i + 1) * w]);
                    dst.v[k * w..(k + 1) * w].copy_from_slice(&src.v[i * w..(i + 1) * w]);
                }
            }
            self.scene_moments[class as usize] = dst;
        }
        self.scene.gaussians = next;
        self.grad_accum = vec![0.0; self.scene.len()];
        self.grad_count = vec![0; self.scene.len()];
    }

    /// Clones small and splits large Gaussians whose mean screen-space
    /// gradient exceeds the threshold, then prunes nearly transparent ones.
    /// Returns the number of (cloned, split, pruned) Gaussians.
    pub fn densify_and_prune(&mut self) -> Result<(usize, usize, usize)> {
        let c = &self.config;
        let n = self.scene.len();
        let limit = c.percent_dense * self.spatial_extent;
        let mut budget = c.max_gaussians.saturating_sub(n);
        let mut clone = vec![false; n];
        let mut split = vec![false; n];
        for i in 0..n {
            let mean = if self.grad_count[i] > 0 { self.grad_accum[i] / self.grad_count[i] as f64 } else { 0.0 };
            if mean < c.densify_grad_threshold {
                continue;
            }
            let big = self.scene.gaussians[i].scale().iter().copied().fold(0.0, f64::max) > limit;
            if big && budget >= 1 {
                split[i] = true;
                budget -= 1;
            } else if !big && budget >= 1 {
                clone[i] = true;
                budget -= 1;
            }
        }
        let mut next = Vec::with_capacity(n + budget);
        let mut origin = Vec::with_capacity(n + budget);
        let mut children = Vec::new();
        for (i, g) in self.scene.gaussians.iter().enumerate() {
            if split[i] {
                let r = rotation_from_quaternion(g.rotation);
                let s = g.scale();
                for _ in 0..2 {
                    let local = [0, 1, 2].map(|k| {
                        let e: f64 = StandardNormal.sample(&mut self.rng);
                        e * s[k]
                    });
                    let mut child = g.clone();
                    for (a, row) in child.position.iter_mut().zip(&r) {
                        *a += row[0] * local[0] + row[1] * local[1] + row[2] * local[2];
                    }
                    for l in &mut child.log_scale {
                        *l -= SPLIT_SCALE_DIVISOR.ln();
                    }
                    children.push(child);
                }
                continue;
            }
            next.push(g.clone());
            origin.push(Some(i));
            if clone[i] {
                children.push(g.clone());
            }
        }
        let cloned = clone.iter().filter(|c| **c).count();
        let splits = split.iter().filter(|c| **c).count();
        origin.extend(std::iter::repeat_n(None, children.len()));
        next.extend(children);

        let threshold = self.config.prune_opacity;
        let keep: Vec<bool> = next.iter().map(|g| self.inference_opacity(g) >= threshold).collect();
        let pruned = keep.iter().filter(|k| !**k).count();
        let (next, origin) = next.into_iter().zip(origin).zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).unzip();
        self.replace_gaussians(next, origin);
        Ok((cloned, splits, pruned))
    }

    /// Lowers every opacity mean to at most `logit(0.01)` and clears its
    /// optimizer moments. Uncertainty parameters are left alone.
    pub fn reset_opacity(&mut self) {
        let cap = logit(RESET_OPACITY);
        for g in &mut self.scene.gaussians {
            g.opacity_mean = g.opacity_mean.min(cap);
        }
        let n = self.scene.len();
        self.scene_moments[ParamClass::OpacityMean as usize] = Moments::zeros(n);
    }
}
