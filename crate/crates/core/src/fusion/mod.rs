//! Point-range fusion: a range-view encoder-decoder and a point-wise MLP
//! stream that swap features at three depths.

mod dense;

pub use dense::{DenseBlock, RangeStream};

use cvf_tensor::{Bound, Element, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    point_features_from_range, range_features_from_points, IndexTable, PointCloud, RangeImage, RANGE_CHANNELS,
};
use crate::nn::{Conv, Init, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeStreamConfig {
    pub encoder_strides: Vec<usize>,
    pub encoder_layers_per_block: Vec<usize>,
    pub decoder_blocks: usize,
    /// Dense layers in each decoder block.
    pub decoder_layers: usize,
    /// Channel count after each decoder block's 1×1 transition.
    pub decoder_width: usize,
    pub growth: usize,
    pub base_channels: usize,
}

impl Default for RangeStreamConfig {
    fn default() -> Self {
        Self {
            encoder_strides: vec![1, 1, 2, 2, 2, 2],
            encoder_layers_per_block: vec![3, 3, 5, 5, 5, 5],
            decoder_blocks: 4,
            decoder_layers: 2,
            decoder_width: 32,
            growth: 8,
            base_channels: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointStreamConfig {
    /// Widths of the MLP that embeds raw point attributes.
    pub mlp_widths: Vec<usize>,
}

impl Default for PointStreamConfig {
    fn default() -> Self {
        Self {
            mlp_widths: vec![32, 64],
        }
    }
}

/// Where in the range stream a fusion block attaches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTap {
    /// Output of encoder block `i`.
    Encoder(usize),
    /// Output of decoder block `i`.
    Decoder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStage {
    Early,
    Middle,
    Late,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionStageSpec {
    pub stage: FusionStage,
    pub range_tap: RangeTap,
    /// Tap resolution relative to the range image.
    pub scale: f64,
    pub fusion_mlp_widths: Vec<usize>,
}

pub fn default_fusion_stages() -> Vec<FusionStageSpec> {
    vec![
        FusionStageSpec {
            stage: FusionStage::Early,
            range_tap: RangeTap::Encoder(1),
            scale: 1.0,
            fusion_mlp_widths: vec![64],
        },
        FusionStageSpec {
            stage: FusionStage::Middle,
            range_tap: RangeTap::Decoder(1),
            scale: 0.25,
            fusion_mlp_widths: vec![64],
        },
        FusionStageSpec {
            stage: FusionStage::Late,
            range_tap: RangeTap::Decoder(3),
            scale: 1.0,
            fusion_mlp_widths: vec![64],
        },
    ]
}

/// Exchanges features between the point stream and one range-stream tap.
#[derive(Clone, Debug)]
pub struct PrFusion {
    mlp: Mlp,
    project: Conv,
    pub scale: f64,
}

impl PrFusion {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        point_channels: usize,
        range_channels: usize,
        scale: f64,
        widths: &[usize],
    ) -> Result<Self> {
        let mlp = Mlp::new(init, &format!("{name}.mlp"), point_channels + range_channels, widths)?;
        let project = Conv::new(init, &format!("{name}.project"), range_channels, mlp.out_channels(), 1, 1)?;
        Ok(Self { mlp, project, scale })
    }

    pub fn out_channels(&self) -> usize {
        self.mlp.out_channels()
    }

    /// Returns the fused `[N, Cm]` point features and a `[Cm, h', w']` range
    /// map holding the fused features at owner pixels and a 1×1 projection of
    /// `range_feats` elsewhere.
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        point_feats: Var,
        range_feats: Var,
        table: &IndexTable,
    ) -> Result<(Var, Var)> {
        let n = tape.shape(point_feats)[0];
        if n != table.num_points() {
            return Err(Error::Contract(format!(
                "{n} point feature rows for an index table over {} points",
                table.num_points()
            )));
        }
        let sampled = point_features_from_range(tape, range_feats, table, self.scale)?;
        let cat = tape.concat(&[point_feats, sampled], 1)?;
        let fused = self.mlp.forward(tape, bound, cat)?;
        let base = self.project.forward(tape, bound, range_feats)?;
        let range_out = range_features_from_points(tape, fused, table, base)?;
        Ok((fused, range_out))
    }
}

/// Per-channel multipliers applied to (range, x, y, z, intensity) before they
/// enter either stream.
pub type InputScale = [f64; RANGE_CHANNELS];

pub const DEFAULT_INPUT_SCALE: InputScale = [0.02, 0.02, 0.02, 0.2, 1.0];

pub fn range_input<T: Element>(img: &RangeImage, scale: &InputScale) -> Tensor<T> {
    let plane = img.h * img.w;
    Tensor::from_fn([RANGE_CHANNELS, img.h, img.w], |i| {
        T::from_f64_lossy(img.channels[i] * scale[i / plane])
    })
}

pub fn point_input<T: Element>(cloud: &PointCloud, scale: &InputScale) -> Tensor<T> {
    let mut data = Vec::with_capacity(cloud.len() * RANGE_CHANNELS);
    for p in &cloud.points {
        for (c, v) in [p.range(), p.x, p.y, p.z, p.intensity].into_iter().enumerate() {
            data.push(T::from_f64_lossy(v * scale[c]));
        }
    }
    Tensor::new([cloud.len(), RANGE_CHANNELS], data).expect("row-major point attributes")
}

/// Point stream, range stream and the three fusion blocks between them.
#[derive(Clone, Debug)]
pub struct PointRangeModule {
    point_mlp: Mlp,
    range: RangeStream,
    fusions: Vec<PrFusion>,
    late: usize,
    pub input_scale: InputScale,
}

impl PointRangeModule {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        range_cfg: &RangeStreamConfig,
        point_cfg: &PointStreamConfig,
        stages: &[FusionStageSpec],
        input_scale: InputScale,
    ) -> Result<Self> {
        validate_stages(stages)?;
        if point_cfg.mlp_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("point stream widths must be ≥ 1"));
        }
        let point_mlp = Mlp::new(init, &format!("{name}.point"), RANGE_CHANNELS, &point_cfg.mlp_widths)?;
        let taps: Vec<RangeTap> = stages.iter().map(|s| s.range_tap).collect();
        let replaced: Vec<usize> = stages
            .iter()
            .map(|s| s.fusion_mlp_widths.last().copied().unwrap_or(0))
            .collect();
        let range = RangeStream::new(init, &format!("{name}.range"), range_cfg, RANGE_CHANNELS, &taps, &replaced)?;

        // Fusion blocks see point features in network order of their taps.
        let mut order: Vec<usize> = (0..stages.len()).collect();
        order.sort_by_key(|&k| tap_order(stages[k].range_tap));
        let mut fusions: Vec<Option<PrFusion>> = vec![None; stages.len()];
        let mut cp = point_mlp.out_channels();
        for k in order {
            let spec = &stages[k];
            if (range.tap_scales[k] - spec.scale).abs() > 1e-12 {
                return Err(Error::config(format!(
                    "{:?} fusion is configured at scale {} but its tap runs at {}",
                    spec.stage, spec.scale, range.tap_scales[k]
                )));
            }
            let block = PrFusion::new(
                init,
                &format!("{name}.fusion.{}", stage_name(spec.stage)),
                cp,
                range.tap_channels[k],
                spec.scale,
                &spec.fusion_mlp_widths,
            )?;
            cp = block.out_channels();
            fusions[k] = Some(block);
        }
        Ok(Self {
            point_mlp,
            range,
            fusions: fusions.into_iter().map(|f| f.expect("every stage built")).collect(),
            late: stages.iter().position(|s| s.stage == FusionStage::Late).expect("validated"),
            input_scale,
        })
    }

    /// Width of the final per-point features, set by the late stage.
    pub fn out_channels(&self) -> usize {
        self.fusions[self.late].out_channels()
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        cloud: &PointCloud,
        img: &RangeImage,
        table: &IndexTable,
    ) -> Result<Var> {
        if cloud.len() != table.num_points() || (img.h, img.w) != (table.h, table.w) {
            return Err(Error::Contract(format!(
                "cloud of {} points and {}x{} image do not match a table over {} points at {}x{}",
                cloud.len(),
                img.h,
                img.w,
                table.num_points(),
                table.h,
                table.w
            )));
        }
        let pts_in = tape.constant(point_input(cloud, &self.input_scale));
        let mut points = self.point_mlp.forward(tape, bound, pts_in)?;
        let range_in = tape.constant(range_input(img, &self.input_scale));
        self.range.forward(tape, bound, range_in, &mut |tape, k, map| {
            let (p, r) = self.fusions[k].forward(tape, bound, points, map, table)?;
            points = p;
            Ok(r)
        })?;
        Ok(points)
    }
}

fn tap_order(tap: RangeTap) -> (usize, usize) {
    match tap {
        RangeTap::Encoder(i) => (0, i),
        RangeTap::Decoder(i) => (1, i),
    }
}

fn stage_name(stage: FusionStage) -> &'static str {
    match stage {
        FusionStage::Early => "early",
        FusionStage::Middle => "middle",
        FusionStage::Late => "late",
    }
}

fn validate_stages(stages: &[FusionStageSpec]) -> Result<()> {
    let expected = [FusionStage::Early, FusionStage::Middle, FusionStage::Late];
    if stages.len() != 3 || !expected.iter().all(|e| stages.iter().any(|s| s.stage == *e)) {
        return Err(Error::config("exactly one early, one middle and one late fusion stage are required"));
    }
    let mut sorted: Vec<&FusionStageSpec> = stages.iter().collect();
    sorted.sort_by_key(|s| tap_order(s.range_tap));
    if sorted.iter().map(|s| s.stage).ne(expected) {
        return Err(Error::config("fusion stages must attach in early, middle, late network order"));
    }
    for s in stages {
        if s.fusion_mlp_widths.is_empty() || s.fusion_mlp_widths.iter().any(|&w| w == 0) {
            return Err(Error::config(format!("{:?} fusion MLP widths must be non-empty and ≥ 1", s.stage)));
        }
    }
    Ok(())
}
