//! Adam with per-element moments that can follow Gaussians through
//! densification.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// First and second moments for a flat parameter block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update at step `t >= 1`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        let c1 = 1.0 - BETA1.powf(t as f64);
        let c2 = 1.0 - BETA2.powf(t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + EPSILON);
        }
    }

    /// Keeps the rows (of `width` values) whose flag is set.
    pub fn retain_rows(&mut self, width: usize, keep: &[bool]) {
        if width == 0 {
            return;
        }
        for buf in [&mut self.m, &mut self.v] {
            let mut out = Vec::with_capacity(buf.len());
            for (row, k) in buf.chunks_exact(width).zip(keep) {
                if *k {
                    out.extend_from_slice(row);
                }
            }
            *buf = out;
        }
    }

    /// Appends `rows` zero rows.
    pub fn push_rows(&mut self, width: usize, rows: usize) {
        self.m.extend(std::iter::repeat_n(0.0, width * rows));
        self.v.extend(std::iter::repeat_n(0.0, width * rows));
    }
}
