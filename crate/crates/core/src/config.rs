//! Architecture and training configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    Caff,
    SpatialCa,
    Add,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QkvRoles {
    SpatialQuery,
    FrequencyQuery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViewFusion {
    #[default]
    Max,
    Mean,
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub modes1: usize,
    pub modes2: usize,
    pub patch: usize,
    pub heads: usize,
    pub fusion: FusionVariant,
    pub qkv_roles: QkvRoles,
    pub enable_lhif: bool,
    pub enable_caff: bool,
    pub feature_width: usize,
    /// Side of the average pooling applied to each projection before encoding (power of two).
    #[serde(default = "default_one")]
    pub input_pool: usize,
    /// SCF-factorized spectral weights when true, full complex weights otherwise.
    #[serde(default = "default_true")]
    pub factorized: bool,
    #[serde(default)]
    pub view_fusion: ViewFusion,
}

impl ModelConfig {
    /// Default architecture for 256x256 projections.
    pub fn full_scale() -> Self {
        ModelConfig {
            levels: 4,
            channels: vec![8, 16, 32, 64],
            modes1: 16,
            modes2: 16,
            patch: 16,
            heads: 4,
            fusion: FusionVariant::Caff,
            qkv_roles: QkvRoles::SpatialQuery,
            enable_lhif: true,
            enable_caff: true,
            feature_width: 64,
            input_pool: 1,
            factorized: true,
            view_fusion: ViewFusion::Max,
        }
    }

    /// Small configuration used for desk-scale experiments.
    pub fn desk() -> Self {
        ModelConfig {
            levels: 3,
            channels: vec![8, 16, 32],
            modes1: 4,
            modes2: 4,
            patch: 8,
            heads: 2,
            feature_width: 16,
            input_pool: 2,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let op = "model_config";
        if self.levels == 0 {
            return Err(Error::invalid(op, "levels must be positive"));
        }
        if self.channels.len() != self.levels {
            return Err(Error::shape(op, "channels length", self.levels, self.channels.len()));
        }
        for (key, v) in [
            ("modes1", self.modes1),
            ("modes2", self.modes2),
            ("patch", self.patch),
            ("heads", self.heads),
            ("feature_width", self.feature_width),
            ("input_pool", self.input_pool),
        ] {
            if v == 0 {
                return Err(Error::invalid(op, format!("{key} must be positive")));
            }
        }
        if !self.input_pool.is_power_of_two() || !self.patch.is_power_of_two() {
            return Err(Error::invalid(op, "input_pool and patch must be powers of two"));
        }
        for &c in &self.channels {
            if c == 0 || c % self.heads != 0 {
                return Err(Error::invalid(op, format!("{} heads do not divide {c} channels", self.heads)));
            }
        }
        Ok(())
    }

    /// Spatial size of every level for a `h x w` projection.
    pub fn level_dims(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let scale = self.input_pool << (self.levels - 1);
        if !h.is_power_of_two() || !w.is_power_of_two() || h < scale * 2 || w < scale * 2 {
            return Err(Error::invalid(
                "model_config",
                format!("{h}x{w} projections cannot support {} levels with input_pool {}", self.levels, self.input_pool),
            ));
        }
        let (h0, w0) = (h / self.input_pool, w / self.input_pool);
        Ok((0..self.levels).map(|l| (h0 >> l, w0 >> l)).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_one")]
    pub batch_size: usize,
    #[serde(default = "default_points")]
    pub points_per_volume: usize,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
}

fn default_lr() -> f64 {
    2e-4
}

fn default_points() -> usize {
    4096
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let op = "train_config";
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(op, "lr must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.points_per_volume == 0 {
            return Err(Error::invalid(op, "batch_size and points_per_volume must be positive"));
        }
        self.model.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
