use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Oriented 3-D box in the LiDAR frame.
///
/// `l` runs along the heading `yaw`, `w` across it, `h` vertically; the
/// centre is the geometric centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
    pub class_id: usize,
    pub score: f64,
}

/// Wraps an angle into `[−π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r - 2.0 * PI
    } else {
        r
    }
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: usize) -> Self {
        Self {
            x: center[0],
            y: center[1],
            z: center[2],
            w: size[0],
            l: size[1],
            h: size[2],
            yaw: normalize_angle(yaw),
            class_id,
            score: 1.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn has_positive_size(&self) -> bool {
        self.w > 0.0 && self.l > 0.0 && self.h > 0.0
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| [self.x + a * c - b * s, self.y + a * s + b * c])
    }

    /// Whether `p` lies inside the box, grown by `margin` on every side.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.l / 2.0 + margin
            && across.abs() <= self.w / 2.0 + margin
            && (p[2] - self.z).abs() <= self.h / 2.0 + margin
    }

    /// BEV diagonal of the footprint.
    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.l)
    }
}

/// Regression residual of `gt` relative to `anchor`, and the direction bit.
///
/// The bit is set when the heading difference points backwards
/// (`cos(θg − θa) < 0`); together with `sin(θg − θa)` it pins the yaw down
/// uniquely.
pub fn encode_box(gt: &Box3D, anchor: &Box3D) -> Result<([f64; 7], bool)> {
    if !gt.has_positive_size() || !anchor.has_positive_size() {
        return Err(Error::Contract("box sizes must be positive".into()));
    }
    let d = anchor.diagonal();
    let delta = gt.yaw - anchor.yaw;
    Ok((
        [
            (gt.x - anchor.x) / d,
            (gt.y - anchor.y) / d,
            (gt.z - anchor.z) / anchor.h,
            (gt.w / anchor.w).ln(),
            (gt.l / anchor.l).ln(),
            (gt.h / anchor.h).ln(),
            delta.sin(),
        ],
        delta.cos() < 0.0,
    ))
}

pub fn decode_box(r: &[f64; 7], anchor: &Box3D, backwards: bool) -> Result<Box3D> {
    if !anchor.has_positive_size() {
        return Err(Error::Contract("anchor sizes must be positive".into()));
    }
    let d = anchor.diagonal();
    let forward = r[6].clamp(-1.0, 1.0).asin();
    let delta = if backwards { PI - forward } else { forward };
    Ok(Box3D::new(
        [anchor.x + r[0] * d, anchor.y + r[1] * d, anchor.z + r[2] * anchor.h],
        [anchor.w * r[3].exp(), anchor.l * r[4].exp(), anchor.h * r[5].exp()],
        anchor.yaw + delta,
        anchor.class_id,
    ))
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    twice.abs() / 2.0
}

/// Sutherland–Hodgman: clips `subject` against the convex, counter-clockwise
/// polygon `clip`.
fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (c_in, p_in) = (cross(a, b, cur) >= 0.0, cross(a, b, prev) >= 0.0);
            if c_in != p_in {
                let (dp, dc) = (cross(a, b, prev), cross(a, b, cur));
                let t = dp / (dp - dc);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if c_in {
                out.push(cur);
            }
        }
    }
    out
}

/// Footprint intersection area of two boxes.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let reach = (a.diagonal() + b.diagonal()) / 2.0;
    if (a.x - b.x).hypot(a.y - b.y) > reach {
        return 0.0;
    }
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()))
}

pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    let union = a.bev_area() + b.bev_area() - inter;
    if !(inter > 0.0) || !(union > 0.0) {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let overlap_z = ((a.z + a.h / 2.0).min(b.z + b.h / 2.0) - (a.z - a.h / 2.0).max(b.z - b.h / 2.0)).max(0.0);
    if overlap_z <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * overlap_z;
    let union = a.volume() + b.volume() - inter;
    if !(inter > 0.0) || !(union > 0.0) {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64, yaw: f64) -> Box3D {
        Box3D::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], yaw, 0)
    }

    #[test]
    fn angle_normalisation_is_half_open() {
        assert_eq!(normalize_angle(PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_angle(0.25), 0.25);
    }

    #[test]
    fn iou_reference_values() {
        assert!((rotated_iou_bev(&unit(0.0, 0.0), &unit(0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert_eq!(rotated_iou_bev(&unit(0.0, 0.0), &unit(3.0, 0.3)), 0.0);
        assert!((rotated_iou_bev(&unit(0.0, 0.0), &unit(0.5, 0.0)) - 1.0 / 3.0).abs() < 1e-9);
        // A unit square against itself turned by 45°: the overlap is a
        // regular octagon of area 2(√2 − 1).
        let oct = 2.0 * (2f64.sqrt() - 1.0);
        let iou = rotated_iou_bev(&unit(0.0, 0.0), &unit(0.0, PI / 4.0));
        assert!((iou - oct / (2.0 - oct)).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_scales_with_vertical_overlap() {
        let a = unit(0.0, 0.0);
        let mut b = a;
        b.z = 0.5;
        assert!((iou_3d(&a, &b) - 0.5 / 1.5).abs() < 1e-12);
        b.z = 2.0;
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn encode_reference_values() {
        let anchor = Box3D::new([1.0, 2.0, -1.0], [1.6, 3.9, 1.56], 0.0, 0);
        let (r, bit) = encode_box(&anchor, &anchor).unwrap();
        assert_eq!(r, [0.0; 7]);
        assert!(!bit);
        let mut wide = anchor;
        wide.w *= 2.0;
        assert!((encode_box(&wide, &anchor).unwrap().0[3] - std::f64::consts::LN_2).abs() < 1e-15);
        let mut bad = anchor;
        bad.h = 0.0;
        assert!(encode_box(&bad, &anchor).is_err());
    }

    #[test]
    fn direction_bit_recovers_reversed_headings() {
        let anchor = Box3D::new([0.0; 3], [1.6, 3.9, 1.56], 0.3, 0);
        for yaw in [-3.0, -2.0, -0.5, 0.0, 1.0, 2.5, 3.1] {
            let gt = Box3D::new([0.5, -0.2, 0.1], [1.7, 4.0, 1.5], yaw, 0);
            let (r, bit) = encode_box(&gt, &anchor).unwrap();
            let back = decode_box(&r, &anchor, bit).unwrap();
            let dyaw = normalize_angle(back.yaw - gt.yaw);
            assert!(dyaw.abs() < 1e-9, "yaw {yaw}: got {}", back.yaw);
        }
    }
}
