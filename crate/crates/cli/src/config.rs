//! Run configuration: one TOML file holding every tunable of the
//! pipeline, with sections mirroring the library modules. Unknown keys
//! are rejected so typos fail loudly, and `load(save(c)) == c`.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::path::Path;
use vio_core::adapter::{AdapterConfig, AugmentRanges};
use vio_core::geometry::Camera;
use vio_core::losses::LossWeights;
use vio_core::optim::AdamConfig;
use vio_core::runtime::AsyncConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub camera: CameraSection,
    pub buffer: BufferSection,
    pub adapter: AdapterSection,
    pub losses: LossSection,
    pub augment: AugmentSection,
    #[serde(rename = "async")]
    pub async_: AsyncSection,
    pub pretrain: PretrainSection,
    pub gen: GenSection,
    pub evaluation: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraSection {
    fn default() -> Self {
        CameraSection {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferSection {
    pub capacity: usize,
    pub threshold: f32,
}

impl Default for BufferSection {
    fn default() -> Self {
        BufferSection {
            capacity: 100,
            threshold: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterSection {
    pub replay_n: usize,
    pub cycles: usize,
    pub min_drive_dist: f64,
    pub lr: f32,
}

impl Default for AdapterSection {
    fn default() -> Self {
        AdapterSection {
            replay_n: 2,
            cycles: 5,
            min_drive_dist: 0.2,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub gamma: f32,
    pub lambda: f32,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            gamma: 0.001,
            lambda: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub saturation: (f32, f32),
    pub hue: (f32, f32),
}

impl Default for AugmentSection {
    fn default() -> Self {
        let d = AugmentRanges::default();
        AugmentSection {
            brightness: d.brightness,
            contrast: d.contrast,
            saturation: d.saturation,
            hue: d.hue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsyncSection {
    pub publish_every: u64,
}

impl Default for AsyncSection {
    fn default() -> Self {
        AsyncSection { publish_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 12,
            batch_size: 4,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub train_frames: usize,
    pub holdout_frames: usize,
    pub dt: f64,
    pub speed_a: f64,
    pub speed_b: f64,
    pub yaw_amplitude: f64,
    /// Seed of the domain pair itself; the CLI seed varies trajectories.
    pub domain_seed: u64,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            train_frames: 300,
            holdout_frames: 150,
            dt: 0.2,
            speed_a: 1.5,
            speed_b: 3.0,
            yaw_amplitude: 0.02,
            domain_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub segment_lengths: Vec<f64>,
    pub stride: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            segment_lengths: vec![10.0, 20.0, 30.0, 40.0],
            stride: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.buffer.capacity == 0 {
            bail!("buffer.capacity must be >= 1");
        }
        if self.adapter.cycles == 0 {
            bail!("adapter.cycles must be >= 1");
        }
        if self.async_.publish_every == 0 {
            bail!("async.publish_every must be >= 1");
        }
        if self.losses.gamma < 0.0 || self.losses.lambda < 0.0 {
            bail!("loss weights must be >= 0");
        }
        self.camera()?;
        Ok(())
    }

    pub fn camera(&self) -> anyhow::Result<Camera> {
        Ok(Camera::new(
            self.camera.fx,
            self.camera.fy,
            self.camera.cx,
            self.camera.cy,
            self.camera.width,
            self.camera.height,
        )?)
    }

    pub fn adapter_config(&self) -> AdapterConfig {
        AdapterConfig {
            replay_n: self.adapter.replay_n,
            cycles: self.adapter.cycles,
            min_drive_dist: self.adapter.min_drive_dist,
            weights: self.loss_weights(),
            augment: AugmentRanges {
                brightness: self.augment.brightness,
                contrast: self.augment.contrast,
                saturation: self.augment.saturation,
                hue: self.augment.hue,
            },
            adam: AdamConfig {
                lr: self.adapter.lr,
                ..AdamConfig::default()
            },
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.losses.gamma,
            lambda: self.losses.lambda,
        }
    }

    pub fn async_config(&self) -> AsyncConfig {
        AsyncConfig {
            publish_every: self.async_.publish_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut cfg = RunConfig::default();
        cfg.adapter.replay_n = 4;
        cfg.buffer.threshold = 0.9;
        cfg.gen.speed_b = 2.5;
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[adapter]\nreplay_n = 2\ntypo_key = 5\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[buffer]\ncapacity = 0\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
