use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::boxes::{rotated_iou_bev, Box3D};
use crate::bev::VoxelGridConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorClass {
    pub name: String,
    /// (w, l, h) in metres.
    pub size: [f64; 3],
    pub z_center: f64,
    pub match_iou_pos: f64,
    pub match_iou_neg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub classes: Vec<AnchorClass>,
}

impl AnchorConfig {
    pub fn kitti() -> Self {
        let class = |name: &str, size, z_center, pos, neg| AnchorClass {
            name: name.into(),
            size,
            z_center,
            match_iou_pos: pos,
            match_iou_neg: neg,
        };
        Self {
            classes: vec![
                class("Car", [1.6, 3.9, 1.56], -1.0, 0.6, 0.45),
                class("Pedestrian", [0.6, 0.8, 1.73], 0.265, 0.5, 0.35),
                class("Cyclist", [0.6, 1.76, 1.73], 0.265, 0.5, 0.35),
            ],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Anchors per BEV cell: two yaws per class.
    pub fn anchors_per_cell(&self) -> usize {
        2 * self.classes.len()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("at least one anchor class is required"));
        }
        for c in &self.classes {
            if c.size.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::config(format!("{}: anchor sizes must be positive", c.name)));
            }
            if !(c.match_iou_neg < c.match_iou_pos) || !(0.0..=1.0).contains(&c.match_iou_pos) || c.match_iou_neg < 0.0 {
                return Err(Error::config(format!(
                    "{}: need 0 ≤ match_iou_neg < match_iou_pos ≤ 1, got {} / {}",
                    c.name, c.match_iou_neg, c.match_iou_pos
                )));
            }
        }
        Ok(())
    }
}

/// Anchors for an `h × w` grid whose cells are `stride` voxels wide.
/// Ordered by cell (row-major), then class, then yaw in {0, π/2}.
pub fn generate_anchors(cfg: &AnchorConfig, h: usize, w: usize, grid: &VoxelGridConfig, stride: usize) -> Vec<Box3D> {
    let mut out = Vec::with_capacity(h * w * cfg.anchors_per_cell());
    for cell in 0..h * w {
        out.extend(cell_anchors(cfg, cell, w, grid, stride));
    }
    out
}

/// The anchors of a single cell, in the same order as [`generate_anchors`].
pub fn cell_anchors<'a>(
    cfg: &'a AnchorConfig,
    cell: usize,
    w: usize,
    grid: &VoxelGridConfig,
    stride: usize,
) -> impl Iterator<Item = Box3D> + 'a {
    let (i, j) = (cell / w, cell % w);
    let (vx, vy) = grid.cell_size();
    let s = stride as f64;
    let x = grid.x_range.0 + (j as f64 + 0.5) * s * vx;
    let y = grid.y_range.0 + (i as f64 + 0.5) * s * vy;
    cfg.classes.iter().enumerate().flat_map(move |(k, c)| {
        [0.0, FRAC_PI_2].map(|yaw| Box3D::new([x, y, c.z_center], c.size, yaw, k))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Positive(usize),
    Negative,
    Ignored,
}

/// Labels each anchor from its best BEV IoU against same-class ground truth.
/// Every ground-truth box also claims its single best anchor as positive.
pub fn assign_targets(anchors: &[Box3D], gts: &[Box3D], cfg: &AnchorConfig) -> Vec<Assignment> {
    let mut best: Vec<(f64, Option<usize>)> = vec![(0.0, None); anchors.len()];
    let mut forced = Vec::with_capacity(gts.len());
    for (g, gt) in gts.iter().enumerate() {
        let mut top: Option<(f64, usize)> = None;
        for (a, anchor) in anchors.iter().enumerate() {
            if anchor.class_id != gt.class_id {
                continue;
            }
            let iou = rotated_iou_bev(anchor, gt);
            if iou <= 0.0 {
                continue;
            }
            if iou > best[a].0 {
                best[a] = (iou, Some(g));
            }
            if top.is_none_or(|(t, _)| iou > t) {
                top = Some((iou, a));
            }
        }
        if let Some((_, a)) = top {
            forced.push((a, g));
        }
    }
    let mut out: Vec<Assignment> = anchors
        .iter()
        .zip(&best)
        .map(|(anchor, &(iou, g))| {
            let class = cfg.classes.get(anchor.class_id);
            let (pos, neg) = class.map_or((f64::INFINITY, 0.0), |c| (c.match_iou_pos, c.match_iou_neg));
            match g {
                Some(g) if iou >= pos => Assignment::Positive(g),
                _ if iou < neg => Assignment::Negative,
                _ => Assignment::Ignored,
            }
        })
        .collect();
    for (a, g) in forced {
        out[a] = Assignment::Positive(g);
    }
    out
}
