//! Bird's-eye-view PNG at half the pillar-grid resolution: points in grey,
//! ground truth in green, detections in red. +x points right, +y points up.

use cvf_core::bev::{GridDims, VoxelGridConfig};
use cvf_core::geometry::PointCloud;
use cvf_core::head::Box3D;
use image::{Rgb, RgbImage};

const POINT: Rgb<u8> = Rgb([150, 150, 150]);
const GT: Rgb<u8> = Rgb([0, 220, 0]);
const DET: Rgb<u8> = Rgb([230, 0, 0]);

struct Canvas<'a> {
    grid: &'a VoxelGridConfig,
    img: RgbImage,
}

impl Canvas<'_> {
    /// Continuous pixel coordinates (column, row) of a LiDAR-frame point.
    fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let (vx, vy, _) = self.grid.voxel_size;
        let col = (x - self.grid.x_range.0) / (2.0 * vx);
        let row = self.img.height() as f64 - (y - self.grid.y_range.0) / (2.0 * vy);
        (col, row)
    }

    fn put(&mut self, col: f64, row: f64, c: Rgb<u8>) {
        if col >= 0.0 && row >= 0.0 && (col as u32) < self.img.width() && (row as u32) < self.img.height() {
            self.img.put_pixel(col as u32, row as u32, c);
        }
    }

    fn line(&mut self, a: [f64; 2], b: [f64; 2], c: Rgb<u8>) {
        let (c0, r0) = self.to_pixel(a[0], a[1]);
        let (c1, r1) = self.to_pixel(b[0], b[1]);
        let steps = (c1 - c0).abs().max((r1 - r0).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.put(c0 + t * (c1 - c0), r0 + t * (r1 - r0), c);
        }
    }

    fn boxes(&mut self, boxes: &[Box3D], c: Rgb<u8>) {
        for b in boxes {
            let corners = b.bev_corners();
            for i in 0..4 {
                self.line(corners[i], corners[(i + 1) % 4], c);
            }
            // Heading tick from the centre to the front edge.
            let front = [
                (corners[0][0] + corners[3][0]) / 2.0,
                (corners[0][1] + corners[3][1]) / 2.0,
            ];
            self.line([b.x, b.y], front, c);
        }
    }
}

pub fn render(grid: &VoxelGridConfig, dims: GridDims, cloud: &PointCloud, gts: &[Box3D], dets: &[Box3D]) -> RgbImage {
    let (w, h) = ((dims.w / 2).max(1) as u32, (dims.h / 2).max(1) as u32);
    let mut canvas = Canvas {
        grid,
        img: RgbImage::new(w, h),
    };
    for p in &cloud.points {
        let (col, row) = canvas.to_pixel(p.x, p.y);
        canvas.put(col, row, POINT);
    }
    canvas.boxes(gts, GT);
    canvas.boxes(dets, DET);
    canvas.img
}
