//! KITTI-style average precision over BEV or 3-D IoU.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::KittiObject;
use crate::error::{Error, Result};
use crate::head::{iou_3d, rotated_iou_bev, Box3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => rotated_iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IouKind::Bev => "bev",
            IouKind::ThreeD => "3d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    /// Benchmark bucket rule on 2-D box height, occlusion and truncation.
    pub fn admits(self, o: &KittiObject) -> bool {
        let (min_height, max_occ, max_trunc) = match self {
            Difficulty::Easy => (40.0, 0, 0.15),
            Difficulty::Moderate => (25.0, 1, 0.30),
            Difficulty::Hard => (25.0, 2, 0.50),
        };
        o.bbox_height() >= min_height && o.occluded <= max_occ && o.truncated <= max_trunc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Match threshold per class id.
    pub iou_thresholds: Vec<f64>,
    pub recall_positions: usize,
    pub iou_kind: IouKind,
    #[serde(default)]
    pub difficulty: Option<Difficulty>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.7, 0.5, 0.5],
            recall_positions: 40,
            iou_kind: IouKind::ThreeD,
            difficulty: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recall_positions != 11 && self.recall_positions != 40 {
            return Err(Error::config(format!(
                "recall_positions must be 11 or 40, got {}",
                self.recall_positions
            )));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::config("IoU thresholds must lie in (0, 1]"));
        }
        Ok(())
    }

    fn threshold(&self, class_id: usize) -> f64 {
        self.iou_thresholds.get(class_id).copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetOutcome {
    TruePositive,
    FalsePositive,
    /// Matched a ground truth excluded from evaluation.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMatch {
    /// One entry per detection, in input order.
    pub outcomes: Vec<DetOutcome>,
    pub gt_matched: Vec<bool>,
}

/// Greedy matching. Detections are visited by descending score (ties by
/// index); each takes the highest-IoU unmatched gt of its class if that IoU
/// reaches the class threshold. `gt_ignored` gts can absorb detections but do
/// not count as positives.
pub fn match_scene(dets: &[Box3D], gts: &[Box3D], gt_ignored: &[bool], cfg: &EvalConfig) -> SceneMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut gt_matched = vec![false; gts.len()];
    let mut outcomes = vec![DetOutcome::FalsePositive; dets.len()];
    for d in order {
        let det = &dets[d];
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] || gt.class_id != det.class_id {
                continue;
            }
            let iou = cfg.iou_kind.iou(det, gt);
            if best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, g));
            }
        }
        if let Some((iou, g)) = best {
            if iou >= cfg.threshold(det.class_id) {
                gt_matched[g] = true;
                outcomes[d] = if gt_ignored.get(g).copied().unwrap_or(false) {
                    DetOutcome::Ignored
                } else {
                    DetOutcome::TruePositive
                };
            }
        }
    }
    SceneMatch { outcomes, gt_matched }
}

/// Recall levels the precision envelope is sampled at.
pub fn recall_levels(positions: usize) -> Result<Vec<f64>> {
    match positions {
        11 => Ok((0..=10).map(|i| i as f64 / 10.0).collect()),
        40 => Ok((1..=40).map(|i| i as f64 / 40.0).collect()),
        n => Err(Error::config(format!("recall_positions must be 11 or 40, got {n}"))),
    }
}

/// AP from `(score, is_tp)` pairs pooled over scenes. The score threshold is
/// swept over distinct scores; the precision at each recall level is the
/// best precision at any recall at or above it.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize, positions: usize) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::UndefinedMetric("average precision with no ground truth".into()));
    }
    let levels = recall_levels(positions)?;
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let mut tp = 0usize;
    for (i, &(score, is_tp)) in sorted.iter().enumerate() {
        tp += usize::from(is_tp);
        let group_end = sorted.get(i + 1).is_none_or(|next| next.0 != score);
        if group_end {
            curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
        }
    }
    let sum: f64 = levels
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(sum / levels.len() as f64)
}

/// Per-object ignore flags: objects outside the difficulty bucket are ignored.
pub fn ignored_by_difficulty(objects: &[KittiObject], difficulty: Option<Difficulty>) -> Vec<bool> {
    objects.iter().map(|o| difficulty.is_some_and(|d| !d.admits(o))).collect()
}

/// Detections and ground truth of one scene.
#[derive(Clone, Debug, Default)]
pub struct SceneEval {
    pub dets: Vec<Box3D>,
    pub gts: Vec<Box3D>,
    pub gt_ignored: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub class_name: String,
    pub n_gt: usize,
    pub n_det: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub iou_kind: IouKind,
    pub recall_positions: usize,
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    /// Mean AP over classes with ground truth.
    pub fn mean_ap(&self) -> Option<f64> {
        let aps: Vec<f64> = self.classes.iter().filter_map(|c| c.ap).collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.classes {
            let ap = c.ap.map_or("undefined".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(
                s,
                "{} AP_{}@R{}: {ap} (gt {}, det {})",
                c.class_name,
                self.iou_kind.name(),
                self.recall_positions,
                c.n_gt,
                c.n_det
            );
        }
        if let Some(m) = self.mean_ap() {
            let _ = writeln!(s, "mAP_{}@R{}: {m:.6}", self.iou_kind.name(), self.recall_positions);
        }
        s
    }

    /// `key=value` lines, one metric each.
    pub fn to_key_values(&self) -> String {
        let prefix = format!("ap_{}_r{}", self.iou_kind.name(), self.recall_positions);
        let mut s = String::new();
        for c in &self.classes {
            if let Some(ap) = c.ap {
                let _ = writeln!(s, "{prefix}.{}={ap}", c.class_name);
            }
        }
        if let Some(m) = self.mean_ap() {
            let _ = writeln!(s, "{prefix}.mean={m}");
        }
        s
    }
}

pub fn evaluate(scenes: &[SceneEval], class_names: &[String], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut per_class: Vec<(Vec<(f64, bool)>, usize)> = vec![(Vec::new(), 0); class_names.len()];
    for scene in scenes {
        let m = match_scene(&scene.dets, &scene.gts, &scene.gt_ignored, cfg);
        for (det, outcome) in scene.dets.iter().zip(&m.outcomes) {
            if let (Some(slot), false) = (per_class.get_mut(det.class_id), *outcome == DetOutcome::Ignored) {
                slot.0.push((det.score, *outcome == DetOutcome::TruePositive));
            }
        }
        for (g, gt) in scene.gts.iter().enumerate() {
            if !scene.gt_ignored.get(g).copied().unwrap_or(false) {
                if let Some(slot) = per_class.get_mut(gt.class_id) {
                    slot.1 += 1;
                }
            }
        }
    }
    let classes = class_names
        .iter()
        .zip(per_class)
        .map(|(name, (scored, n_gt))| {
            let ap = if n_gt == 0 {
                None
            } else {
                Some(average_precision(&scored, n_gt, cfg.recall_positions)?)
            };
            Ok(ClassReport {
                class_name: name.clone(),
                n_gt,
                n_det: scored.len(),
                ap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        iou_kind: cfg.iou_kind,
        recall_positions: cfg.recall_positions,
        classes,
    })
}
