//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::FieldConfig;

/// Ablation variants: which of the neural field (NF), uncertainty-aware
/// opacity (UAOO) and periodic opacity resetting (POR) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::M1, Variant::M2, Variant::M3, Variant::M4, Variant::M5, Variant::M6];

    pub fn neural_field(self) -> bool {
        matches!(self, Variant::M2 | Variant::M3 | Variant::M6)
    }

    pub fn uaoo(self) -> bool {
        !matches!(self, Variant::M1 | Variant::M2)
    }

    pub fn por(self) -> bool {
        !matches!(self, Variant::M5 | Variant::M6)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown variant {s:?}, expected M1..M6")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Non-identity styles M; the dataset must have M + 1 groups.
    pub styles: usize,
    pub lambda_ucn: f64,
    /// `-1` keeps the uncertainty term as `-sum sigma`, `+1` flips it.
    pub ucn_sign: f64,
    /// Apply the uncertainty term as a plain gradient step outside Adam
    /// instead of adding it to the Adam gradient.
    pub ucn_decoupled: bool,
    pub tau: f64,
    pub dssim_weight: f64,
    /// Position rates are multiplied by the camera extent.
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_embedding: f64,
    pub lr_field: f64,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub por_interval: usize,
    pub max_gaussians: usize,
    pub init_points: usize,
    pub init_opacity: f64,
    pub init_opacity_std: f64,
    pub queue_capacity: usize,
    pub clean_capacity: usize,
    pub latent_channels: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub feature_channels: usize,
    pub sh_degree: usize,
    pub embed_dim: usize,
    /// Index into the training views of the camera that conditions
    /// evaluation renders.
    pub cond_camera: usize,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            seed: 0,
            variant: Variant::M6,
            styles: 3,
            lambda_ucn: 0.0005,
            ucn_sign: -1.0,
            ucn_decoupled: true,
            tau: crate::field::DEFAULT_TAU,
            dssim_weight: 0.2,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
            lr_embedding: 1e-3,
            lr_field: 1e-3,
            densify_from: 100,
            densify_until: 1500,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            por_interval: 1000,
            max_gaussians: 3000,
            init_points: 500,
            init_opacity: 0.1,
            init_opacity_std: 0.1,
            queue_capacity: crate::field::DEFAULT_QUEUE_CAPACITY,
            clean_capacity: 16,
            latent_channels: 24,
            latent_height: 8,
            latent_width: 8,
            feature_channels: 16,
            sh_degree: crate::scene::DEFAULT_SH_DEGREE,
            embed_dim: crate::scene::DEFAULT_EMBED_DIM,
            cond_camera: 0,
            log_interval: 100,
        }
    }
}

macro_rules! config_fields {
    ($mac:ident) => {
        $mac! {
            iterations, seed, variant, styles, lambda_ucn, ucn_sign, ucn_decoupled, tau, dssim_weight,
            lr_position, lr_position_final, lr_rotation, lr_scale, lr_opacity, lr_sh,
            lr_embedding, lr_field, densify_from, densify_until, densify_interval,
            densify_grad_threshold, percent_dense, prune_opacity, por_interval,
            max_gaussians, init_points, init_opacity, init_opacity_std, queue_capacity,
            clean_capacity, latent_channels, latent_height, latent_width, feature_channels,
            sh_degree, embed_dim, cond_camera, log_interval
        }
    };
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Validation(format!("line {line}: bad value {value:?} for key {key}")))
}

impl TrainConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment. Unknown keys are rejected by name.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            macro_rules! assign {
                ($($f:ident),*) => {
                    match key {
                        $(stringify!($f) => c.$f = parse_value(key, value, i + 1)?,)*
                        _ => return Err(Error::Validation(format!("unknown config key {key:?}"))),
                    }
                };
            }
            config_fields!(assign);
        }
        c.validate()?;
        Ok(c)
    }

    /// Text form that [`TrainConfig::parse`] reads back exactly.
    pub fn render(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($($f:ident),*) => {
                $( writeln!(out, "{} = {}", stringify!($f), Fmt(&self.$f)).expect("string write"); )*
            };
        }
        config_fields!(emit);
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_sh", self.lr_sh),
            ("lr_embedding", self.lr_embedding),
            ("lr_field", self.lr_field),
            ("tau", self.tau),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.ucn_sign != 1.0 && self.ucn_sign != -1.0 {
            return Err(Error::Validation(format!("ucn_sign must be 1 or -1, got {}", self.ucn_sign)));
        }
        if !(0.0..=1.0).contains(&self.dssim_weight) {
            return Err(Error::Validation(format!("dssim_weight {} outside [0, 1]", self.dssim_weight)));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::Validation(format!("init_opacity {} outside (0, 1)", self.init_opacity)));
        }
        if !(self.init_opacity_std > 0.0) || !(self.lambda_ucn >= 0.0) {
            return Err(Error::Validation("init_opacity_std must be positive and lambda_ucn non-negative".into()));
        }
        if self.densify_interval == 0 || self.por_interval == 0 || self.log_interval == 0 {
            return Err(Error::Validation("intervals must be positive".into()));
        }
        if self.init_points == 0 || self.queue_capacity == 0 || self.clean_capacity == 0 {
            return Err(Error::Validation("init_points and queue capacities must be positive".into()));
        }
        if self.sh_degree > crate::numerics::sh::MAX_SH_DEGREE {
            return Err(Error::Validation(format!("sh_degree {} exceeds 3", self.sh_degree)));
        }
        Ok(())
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            latent_channels: self.latent_channels,
            latent_height: self.latent_height,
            latent_width: self.latent_width,
            feature_channels: self.feature_channels,
            sh_degree: self.sh_degree,
            embed_dim: self.embed_dim,
            ..FieldConfig::default()
        }
    }
}

struct Fmt<'a, T>(&'a T);

macro_rules! fmt_debug {
    ($($t:ty),*) => {$(
        impl std::fmt::Display for Fmt<'_, $t> {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{:?}", self.0)
            }
        }
    )*};
}
fmt_debug!(f64, usize, u64, bool);

impl std::fmt::Display for Fmt<'_, Variant> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
