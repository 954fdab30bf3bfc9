//! Slice-pillar bird's-eye-view encoding: voxelisation of point features into
//! per-column height slices, a per-cell MLP, and a 2-D convolutional backbone.

mod backbone;
mod pillars;

pub use backbone::{Backbone, BackboneConfig};
pub use pillars::{scatter_to_pillars, PillarMlp, PillarVolume};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detection range and voxel size in metres. Ranges are half-open.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub voxel_size: (f64, f64, f64),
}

impl Default for VoxelGridConfig {
    fn default() -> Self {
        Self {
            x_range: (0.0, 69.12),
            y_range: (-39.68, 39.68),
            z_range: (-3.0, 1.0),
            voxel_size: (0.16, 0.16, 0.2),
        }
    }
}

/// Grid extents: `h` cells along y, `w` along x, `d` height slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridDims {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl GridDims {
    pub fn cells(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelIndex {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
}

impl VoxelGridConfig {
    pub fn dims(&self) -> Result<GridDims> {
        let count = |axis: &str, (lo, hi): (f64, f64), size: f64| -> Result<usize> {
            let n = (hi - lo) / size;
            if !(size > 0.0) || !(n >= 1.0) || (n - n.round()).abs() > 1e-6 {
                return Err(Error::config(format!(
                    "{axis} range [{lo}, {hi}) is not a positive whole number of {size} m voxels"
                )));
            }
            Ok(n.round() as usize)
        };
        let (vx, vy, vz) = self.voxel_size;
        Ok(GridDims {
            w: count("x", self.x_range, vx)?,
            h: count("y", self.y_range, vy)?,
            d: count("z", self.z_range, vz)?,
        })
    }

    /// BEV cell size in metres along x and y.
    pub fn cell_size(&self) -> (f64, f64) {
        (self.voxel_size.0, self.voxel_size.1)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.x_range.0 && x < self.x_range.1 && y >= self.y_range.0 && y < self.y_range.1
    }
}

/// Voxel containing `p`, or `None` outside the detection range.
pub fn compute_voxel_index(p: [f64; 3], cfg: &VoxelGridConfig, dims: GridDims) -> Option<VoxelIndex> {
    let axis = |v: f64, (lo, hi): (f64, f64), size: f64, n: usize| -> Option<usize> {
        if !(v >= lo && v < hi) {
            return None;
        }
        // The small bias keeps points sitting exactly on a boundary from
        // falling into the lower voxel through rounding.
        Some((((v - lo) / size + 1e-9).floor() as usize).min(n - 1))
    };
    let (vx, vy, vz) = cfg.voxel_size;
    Some(VoxelIndex {
        ix: axis(p[0], cfg.x_range, vx, dims.w)?,
        iy: axis(p[1], cfg.y_range, vy, dims.h)?,
        iz: axis(p[2], cfg.z_range, vz, dims.d)?,
    })
}

/// 2×2 max-pool of a row-major `h × w` occupancy mask.
pub fn pool_occupancy(occ: &[bool], h: usize, w: usize) -> Vec<bool> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![false; ho * wo];
    for i in 0..h.min(ho * 2) {
        for j in 0..w.min(wo * 2) {
            if occ[i * w + j] {
                out[(i / 2) * wo + j / 2] = true;
            }
        }
    }
    out
}
