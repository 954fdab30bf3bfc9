//! Experiment configuration, read from a single TOML file.
//!
//! Every section is optional and falls back to the KITTI defaults; see
//! `configs/` for complete examples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bev::{BackboneConfig, VoxelGridConfig};
use crate::data::{AugmentationConfig, Calibration, SyntheticSceneSpec};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::fusion::{default_fusion_stages, FusionStageSpec, InputScale, PointStreamConfig, RangeStreamConfig, DEFAULT_INPUT_SCALE};
use crate::geometry::SphericalConfig;
use crate::head::{AnchorConfig, LossConfig};
use crate::model::CvfNet;

/// Range-image geometry with the field of view in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphericalSection {
    pub h: usize,
    pub w: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
}

impl Default for SphericalSection {
    fn default() -> Self {
        Self {
            h: 48,
            w: 512,
            fov_up_deg: 3.0,
            fov_down_deg: -25.0,
        }
    }
}

impl SphericalSection {
    pub fn to_config(&self) -> SphericalConfig {
        SphericalConfig {
            h: self.h,
            w: self.w,
            fov_up: self.fov_up_deg.to_radians(),
            fov_down: self.fov_down_deg.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub spherical: SphericalSection,
    pub input_scale: InputScale,
    pub range_stream: RangeStreamConfig,
    pub point_stream: PointStreamConfig,
    pub fusion: Vec<FusionStageSpec>,
    pub voxel: VoxelGridConfig,
    /// Widths of the per-cell slice-pillar MLP; the last is the BEV channel count.
    pub pillar_widths: Vec<usize>,
    pub backbone: BackboneConfig,
    pub head_channels: usize,
    pub anchors: AnchorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            spherical: SphericalSection::default(),
            input_scale: DEFAULT_INPUT_SCALE,
            range_stream: RangeStreamConfig::default(),
            point_stream: PointStreamConfig::default(),
            fusion: default_fusion_stages(),
            voxel: VoxelGridConfig::default(),
            pillar_widths: vec![64],
            backbone: BackboneConfig::default(),
            head_channels: 128,
            anchors: AnchorConfig::kitti(),
        }
    }
}

impl ModelConfig {
    pub fn class_names(&self) -> Vec<String> {
        self.anchors.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let sph = self.spherical.to_config();
        sph.validate()?;
        let down = self.range_stream.encoder_strides.iter().product::<usize>().max(1);
        if sph.h % down != 0 || sph.w % down != 0 {
            return Err(Error::config(format!(
                "range image {}x{} is not divisible by the encoder downscale {down}",
                sph.h, sph.w
            )));
        }
        if self.input_scale.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("input_scale entries must be finite"));
        }
        let dims = self.voxel.dims()?;
        if dims.h % 8 != 0 || dims.w % 8 != 0 {
            return Err(Error::config(format!(
                "BEV grid {}x{} must be divisible by 8 for the three stride-2 backbone stages",
                dims.h, dims.w
            )));
        }
        if self.pillar_widths.is_empty() || self.pillar_widths.contains(&0) || self.head_channels == 0 {
            return Err(Error::config("pillar MLP and head widths must be non-empty and positive"));
        }
        if self.backbone.widths.contains(&0) {
            return Err(Error::config("backbone widths must be positive"));
        }
        self.anchors.validate()?;
        // Building the network checks the remaining structural constraints
        // (fusion taps, scales and stage order).
        CvfNet::<f32>::new(self, 0).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    pub warmup_fraction: f64,
    /// Global gradient-norm ceiling; zero disables clipping.
    pub grad_clip: f64,
    pub augment: bool,
    pub seed: u64,
    /// Dataset directory (see `data`).
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 12,
            lr_peak: 1e-2,
            lr_floor: 1e-7,
            warmup_fraction: 0.4,
            grad_clip: 10.0,
            augment: true,
            seed: 0,
            data: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_keep: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.1,
            nms_iou: 0.1,
            max_keep: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub points: usize,
    pub objects: usize,
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            points: 120_000,
            objects: 5,
            warmup: 3,
            iterations: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub augment: AugmentationConfig,
    pub eval: EvalConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub synth: SyntheticSceneSpec,
    pub bench: BenchConfig,
    /// Camera → LiDAR transform for camera-frame labels; absent means labels
    /// are already in the LiDAR frame.
    pub calibration: Option<Calibration>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        self.eval.validate()?;
        self.synth.validate()?;
        let k = self.model.anchors.num_classes();
        if self.eval.iou_thresholds.len() < k {
            return Err(Error::config(format!(
                "{} eval IoU thresholds for {k} classes",
                self.eval.iou_thresholds.len()
            )));
        }
        if let Some(c) = self.synth.classes.iter().find(|c| c.class_id >= k) {
            return Err(Error::config(format!("synthetic class id {} has no anchor class", c.class_id)));
        }
        let v = &self.model.voxel;
        let (sx, sy) = (self.synth.x_range, self.synth.y_range);
        if sx.0 < v.x_range.0 || sx.1 > v.x_range.1 || sy.0 < v.y_range.0 || sy.1 > v.y_range.1 {
            return Err(Error::config("synthetic object placement must lie inside the detection range"));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || !(t.lr_peak > 0.0) || !(t.lr_floor >= 0.0) || t.grad_clip < 0.0 {
            return Err(Error::config("training needs epochs, batch size and learning rates > 0"));
        }
        if !(0.0..=1.0).contains(&t.warmup_fraction) {
            return Err(Error::config("warmup_fraction must lie in [0, 1]"));
        }
        let i = &self.infer;
        if !(0.0..=1.0).contains(&i.score_thresh) || !(0.0..=1.0).contains(&i.nms_iou) {
            return Err(Error::config("inference thresholds must lie in [0, 1]"));
        }
        if self.bench.iterations < 20 || self.bench.warmup < 3 {
            return Err(Error::config("bench needs at least 3 warm-up and 20 timed iterations"));
        }
        if let Some(c) = &self.calibration {
            c.validate()?;
        }
        Ok(())
    }
}
