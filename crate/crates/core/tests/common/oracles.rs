//! Brute-force references shared by the suites.

use std::collections::HashMap;

use cvf_core::bev::VoxelGridConfig;
use cvf_core::geometry::PointCloud;
use cvf_core::head::{rotated_iou_bev, Box3D};
use cvf_tensor::Tensor;

pub fn matmul_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, cin, cout) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    let mut out = vec![0.0; n * cout];
    for r in 0..n {
        for j in 0..cout {
            let mut acc = b.data()[j];
            for i in 0..cin {
                acc += x.at(&[r, i]) * w.at(&[i, j]);
            }
            out[r * cout + j] = acc;
        }
    }
    out
}

/// Direct six-loop convolution with zero padding.
pub fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kn, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([kn, ho, wo]);
    for o in 0..kn {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b.data()[o];
                for ci in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (oy * stride + dy) as isize - pad as isize;
                            let ix = (ox * stride + dx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += x.at(&[ci, iy as usize, ix as usize]) * k.at(&[o, ci, dy, dx]);
                            }
                        }
                    }
                }
                out.data_mut()[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

/// Voxel `(ix, iy, iz)` → index of the last point that lands in it.
pub fn scatter_oracle(cloud: &PointCloud, cfg: &VoxelGridConfig) -> HashMap<(usize, usize, usize), usize> {
    let dims = cfg.dims().expect("valid grid");
    let mut out = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let fx = ((p.x - cfg.x_range.0) / cfg.voxel_size.0).floor();
        let fy = ((p.y - cfg.y_range.0) / cfg.voxel_size.1).floor();
        let fz = ((p.z - cfg.z_range.0) / cfg.voxel_size.2).floor();
        if fx < 0.0 || fy < 0.0 || fz < 0.0 || fx >= dims.w as f64 || fy >= dims.h as f64 || fz >= dims.d as f64 {
            continue;
        }
        out.insert((fx as usize, fy as usize, fz as usize), i);
    }
    out
}

/// Remove-the-losers formulation of greedy NMS.
pub fn nms_oracle(boxes: &[Box3D], thresh: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let best = *alive
            .iter()
            .max_by(|&&a, &&b| boxes[a].score.total_cmp(&boxes[b].score).then(b.cmp(&a)))
            .unwrap();
        kept.push(best);
        alive.retain(|&j| {
            j != best && !(boxes[j].class_id == boxes[best].class_id && rotated_iou_bev(&boxes[j], &boxes[best]) >= thresh)
        });
    }
    kept
}
