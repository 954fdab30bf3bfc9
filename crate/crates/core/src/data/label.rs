//! KITTI object label text: one object per line,
//! `type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{normalize_angle, Box3D};

#[derive(Clone, Debug, PartialEq)]
pub struct KittiObject {
    pub class_name: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// 2-D image box (x1, y1, x2, y2) in pixels.
    pub bbox: [f64; 4],
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

/// Rigid camera → LiDAR transform, `p_lidar = R · p_cam + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Calibration {
    /// Axis permutation between the KITTI camera (x right, y down, z
    /// forward) and LiDAR (x forward, y left, z up) frames, no offset.
    pub fn axes_only() -> Self {
        Self {
            rotation: [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            translation: [0.0; 3],
        }
    }

    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
    }

    fn rotate_back(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[0][i] * v[0] + r[1][i] * v[1] + r[2][i] * v[2])
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.rotation[i][k] * self.rotation[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(Error::config("calibration rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }
}

/// Placeholder 2-D box written for objects without image annotations. Its
/// 100 px height keeps them in the easiest difficulty bucket.
const PLACEHOLDER_BBOX: [f64; 4] = [0.0, 0.0, 100.0, 100.0];

impl KittiObject {
    /// Box in the LiDAR frame. Without calibration the location is taken as
    /// the LiDAR-frame box centre and `rotation_y` as the LiDAR yaw.
    pub fn to_box(&self, class_id: usize, calib: Option<&Calibration>) -> Box3D {
        let size = [self.w, self.l, self.h];
        let b = match calib {
            None => Box3D::new(self.location, size, self.rotation_y, class_id),
            Some(c) => {
                let [x, y, z] = self.location;
                let center = c.rotate([x, y - self.h / 2.0, z]);
                let center = [0, 1, 2].map(|i| center[i] + c.translation[i]);
                let (s, co) = self.rotation_y.sin_cos();
                let heading = c.rotate([co, 0.0, -s]);
                Box3D::new(center, size, heading[1].atan2(heading[0]), class_id)
            }
        };
        match self.score {
            Some(s) => b.with_score(s),
            None => b,
        }
    }

    pub fn from_box(b: &Box3D, class_name: &str, calib: Option<&Calibration>, with_score: bool) -> Self {
        let (location, rotation_y) = match calib {
            None => ([b.x, b.y, b.z], b.yaw),
            Some(c) => {
                let rel = [b.x - c.translation[0], b.y - c.translation[1], b.z - c.translation[2]];
                let center = c.rotate_back(rel);
                let (s, co) = b.yaw.sin_cos();
                let heading = c.rotate_back([co, s, 0.0]);
                (
                    [center[0], center[1] + b.h / 2.0, center[2]],
                    normalize_angle((-heading[2]).atan2(heading[0])),
                )
            }
        };
        Self {
            class_name: class_name.to_string(),
            truncated: 0.0,
            occluded: 0,
            alpha: -10.0,
            bbox: PLACEHOLDER_BBOX,
            h: b.h,
            w: b.w,
            l: b.l,
            location,
            rotation_y,
            score: with_score.then_some(b.score),
        }
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    /// One label line. Geometry is printed at full round-trip precision.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {} {} {} {} {} {} {}",
            self.class_name,
            self.truncated,
            self.occluded,
            self.alpha,
            self.bbox[0],
            self.bbox[1],
            self.bbox[2],
            self.bbox[3],
            self.h,
            self.w,
            self.l,
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y
        );
        if let Some(score) = self.score {
            let _ = write!(s, " {score}");
        }
        s
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(format!("expected 15 or 16 fields, found {}", fields.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| format!("field {} ({:?}): {e}", i + 1, fields[i]))
        };
        let occluded = fields[2]
            .parse::<f64>()
            .map_err(|e| format!("field 3 ({:?}): {e}", fields[2]))? as i32;
        Ok(Self {
            class_name: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            h: num(8)?,
            w: num(9)?,
            l: num(10)?,
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        })
    }
}

/// Parses a label file; blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<KittiObject>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            KittiObject::parse_line(l).map_err(|message| Error::Parse {
                path: path.into(),
                line: n + 1,
                message,
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, objects: &[KittiObject]) -> Result<()> {
    let mut text = String::new();
    for o in objects {
        text.push_str(&o.to_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_standard_line() {
        let o = KittiObject::parse_line(
            "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
        )
        .unwrap();
        assert_eq!(o.class_name, "Car");
        assert_eq!((o.h, o.w, o.l), (1.65, 1.67, 3.64));
        assert_eq!(o.location, [-0.65, 1.71, 46.70]);
        assert!(o.score.is_none());
        assert!(KittiObject::parse_line("Car 0 0").is_err());
    }

    #[test]
    fn calibrated_boxes_round_trip() {
        let calib = Calibration {
            rotation: Calibration::axes_only().rotation,
            translation: [0.27, -0.01, -0.08],
        };
        calib.validate().unwrap();
        let b = Box3D::new([12.0, -3.5, -0.9], [1.6, 3.9, 1.5], 0.7, 0).with_score(0.8);
        let obj = KittiObject::from_box(&b, "Car", Some(&calib), true);
        // Heading +x in the LiDAR frame is +z in the camera: rotation_y = −yaw − π/2.
        assert!((normalize_angle(obj.rotation_y + 0.7 + std::f64::consts::FRAC_PI_2)).abs() < 1e-12);
        let back = KittiObject::parse_line(&obj.to_line()).unwrap().to_box(0, Some(&calib));
        for (a, e) in [back.x, back.y, back.z, back.w, back.l, back.h, back.yaw, back.score]
            .iter()
            .zip([b.x, b.y, b.z, b.w, b.l, b.h, b.yaw, b.score])
        {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn malformed_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.txt");
        fs::write(&path, "Car 0 0 0 0 0 0 0 1 1 1 1 1 1 0\n\nCar 0 0 0 0 0 0 0 1 1 x 1 1 1 0\n").unwrap();
        match read_labels(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "").unwrap();
        assert!(read_labels(&path).unwrap().is_empty());
    }
}
