//! Spherical projection of LiDAR sweeps into a range image, and the
//! bidirectional point/pixel index that links the two views.

mod features;
mod io;

pub use features::{point_features_from_range, range_features_from_points};
pub use io::{read_bin, read_cloud, read_text, write_bin};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Range-image channels, in storage order.
pub const RANGE_CHANNELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Range-image resolution and vertical field of view (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalConfig {
    pub h: usize,
    pub w: usize,
    pub fov_up: f64,
    pub fov_down: f64,
}

impl Default for SphericalConfig {
    fn default() -> Self {
        Self {
            h: 48,
            w: 512,
            fov_up: 3f64.to_radians(),
            fov_down: (-25f64).to_radians(),
        }
    }
}

impl SphericalConfig {
    pub fn fov(&self) -> f64 {
        self.fov_up - self.fov_down
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::config(format!("range image {}x{} is empty", self.h, self.w)));
        }
        if !(self.fov_up.is_finite() && self.fov_down.is_finite()) || self.fov() <= 0.0 {
            return Err(Error::config(format!(
                "vertical field of view [{}, {}] rad is empty",
                self.fov_down, self.fov_up
            )));
        }
        Ok(())
    }
}

/// Continuous and discrete image coordinates of one projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u_f: f64,
    pub v_f: f64,
    pub u: usize,
    pub v: usize,
    pub range: f64,
}

/// Projects one point. Returns `Ok(None)` for points outside the vertical
/// field of view and an error for a point at the origin.
pub fn project_point(p: [f64; 3], cfg: &SphericalConfig) -> Result<Option<Projection>> {
    let [x, y, z] = p;
    let range = (x * x + y * y + z * z).sqrt();
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::DegeneratePoint);
    }
    let elevation = (z / range).asin();
    if elevation < cfg.fov_down || elevation > cfg.fov_up {
        return Ok(None);
    }
    let (h, w) = (cfg.h as f64, cfg.w as f64);
    let u_f = 0.5 * (1.0 - y.atan2(x) / std::f64::consts::PI) * w;
    let v_f = (1.0 - (elevation - cfg.fov_down) / cfg.fov()) * h;
    let u = (u_f.floor().max(0.0) as usize).min(cfg.w - 1);
    let v = (v_f.floor().max(0.0) as usize).min(cfg.h - 1);
    Ok(Some(Projection {
        u_f,
        v_f,
        u,
        v,
        range,
    }))
}

/// Pixel a point projects to, with its continuous coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelRef {
    pub u: usize,
    pub v: usize,
    pub u_f: f64,
    pub v_f: f64,
    pub range: f64,
}

/// Point ↔ pixel correspondence for one sweep.
///
/// Every in-view point knows its pixel; each occupied pixel knows the single
/// point that owns it (the nearest one).
#[derive(Clone, Debug)]
pub struct IndexTable {
    pub h: usize,
    pub w: usize,
    pub point_to_pixel: Vec<Option<PixelRef>>,
    /// Row-major `[h, w]`.
    pub pixel_to_point: Vec<Option<usize>>,
}

impl IndexTable {
    pub fn num_points(&self) -> usize {
        self.point_to_pixel.len()
    }

    pub fn owner(&self, u: usize, v: usize) -> Option<usize> {
        self.pixel_to_point[v * self.w + u]
    }

    /// `(pixel, point)` pairs for all occupied pixels in row-major order.
    pub fn owners(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixel_to_point
            .iter()
            .enumerate()
            .filter_map(|(px, o)| o.map(|i| (px, i)))
    }

    pub fn num_valid(&self) -> usize {
        self.point_to_pixel.iter().filter(|p| p.is_some()).count()
    }
}

/// A `[5, h, w]` image of (range, x, y, z, intensity) plus occupancy.
#[derive(Clone, Debug)]
pub struct RangeImage {
    pub h: usize,
    pub w: usize,
    /// Channel-major `[5, h, w]`; zero at empty pixels.
    pub channels: Vec<f64>,
    pub occupancy: Vec<bool>,
}

impl RangeImage {
    pub fn get(&self, channel: usize, v: usize, u: usize) -> f64 {
        self.channels[(channel * self.h + v) * self.w + u]
    }
}

/// Builds the range image and index table. On pixel collisions the nearest
/// point wins, ties going to the lower point index.
///
/// Points at the origin or outside the vertical field of view are left
/// unprojected. Errors if nothing lands in the image.
pub fn build_range_image(cloud: &PointCloud, cfg: &SphericalConfig) -> Result<(RangeImage, IndexTable)> {
    cfg.validate()?;
    let (h, w) = (cfg.h, cfg.w);
    let mut point_to_pixel = Vec::with_capacity(cloud.len());
    let mut pixel_to_point: Vec<Option<usize>> = vec![None; h * w];
    let mut best = vec![f64::INFINITY; h * w];
    for (i, p) in cloud.points.iter().enumerate() {
        let proj = match project_point([p.x, p.y, p.z], cfg) {
            Ok(Some(proj)) => proj,
            Ok(None) | Err(Error::DegeneratePoint) => {
                point_to_pixel.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        point_to_pixel.push(Some(PixelRef {
            u: proj.u,
            v: proj.v,
            u_f: proj.u_f,
            v_f: proj.v_f,
            range: proj.range,
        }));
        let px = proj.v * w + proj.u;
        if proj.range < best[px] {
            best[px] = proj.range;
            pixel_to_point[px] = Some(i);
        }
    }

    let mut channels = vec![0.0; RANGE_CHANNELS * h * w];
    let mut occupancy = vec![false; h * w];
    let mut any = false;
    for (px, owner) in pixel_to_point.iter().enumerate() {
        let Some(i) = *owner else { continue };
        let p = &cloud.points[i];
        for (c, value) in [best[px], p.x, p.y, p.z, p.intensity].into_iter().enumerate() {
            channels[c * h * w + px] = value;
        }
        occupancy[px] = true;
        any = true;
    }
    if !any {
        return Err(Error::EmptyImage);
    }
    Ok((
        RangeImage {
            h,
            w,
            channels,
            occupancy,
        },
        IndexTable {
            h,
            w,
            point_to_pixel,
            pixel_to_point,
        },
    ))
}
