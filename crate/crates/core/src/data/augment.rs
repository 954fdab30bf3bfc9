use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneSample;
use crate::error::{Error, Result};
use crate::head::{bev_intersection, Box3D};
use crate::geometry::Point;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub flip_x_prob: f64,
    pub scale_range: (f64, f64),
    /// Radians about the z axis.
    pub rotation_range: (f64, f64),
    /// Upper bound on objects injected per class; zero disables injection.
    pub gt_sample_max_per_class: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip_x_prob: 0.5,
            scale_range: (0.95, 1.05),
            rotation_range: (-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4),
            gt_sample_max_per_class: 15,
        }
    }
}

impl AugmentationConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        Self {
            flip_x_prob: 0.0,
            scale_range: (1.0, 1.0),
            rotation_range: (0.0, 0.0),
            gt_sample_max_per_class: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.scale_range;
        let (r0, r1) = self.rotation_range;
        if !(0.0..=1.0).contains(&self.flip_x_prob) || !(s0 > 0.0 && s0 <= s1) || !(r0 <= r1) {
            return Err(Error::config(
                "augmentation needs flip probability in [0, 1] and ordered scale/rotation ranges with positive scales",
            ));
        }
        Ok(())
    }
}

/// Mirrors the scene across the x axis.
pub fn flip_y(s: &mut SceneSample) {
    for p in &mut s.cloud.points {
        p.y = -p.y;
    }
    for b in &mut s.gts {
        *b = Box3D::new([b.x, -b.y, b.z], [b.w, b.l, b.h], -b.yaw, b.class_id).with_score(b.score);
    }
}

pub fn rotate_z(s: &mut SceneSample, angle: f64) {
    let (sn, cs) = angle.sin_cos();
    for p in &mut s.cloud.points {
        (p.x, p.y) = (cs * p.x - sn * p.y, sn * p.x + cs * p.y);
    }
    for b in &mut s.gts {
        let (x, y) = (cs * b.x - sn * b.y, sn * b.x + cs * b.y);
        *b = Box3D::new([x, y, b.z], [b.w, b.l, b.h], b.yaw + angle, b.class_id).with_score(b.score);
    }
}

pub fn scale(s: &mut SceneSample, factor: f64) {
    for p in &mut s.cloud.points {
        p.x *= factor;
        p.y *= factor;
        p.z *= factor;
    }
    for b in &mut s.gts {
        for v in [&mut b.x, &mut b.y, &mut b.z, &mut b.w, &mut b.l, &mut b.h] {
            *v *= factor;
        }
    }
}

/// Random flip, then rotation, then scaling.
pub fn augment<R: Rng + ?Sized>(mut s: SceneSample, cfg: &AugmentationConfig, rng: &mut R) -> SceneSample {
    if cfg.flip_x_prob > 0.0 && rng.random::<f64>() < cfg.flip_x_prob {
        flip_y(&mut s);
    }
    let (r0, r1) = cfg.rotation_range;
    if r0 != 0.0 || r1 != 0.0 {
        rotate_z(&mut s, rng.random_range(r0..=r1));
    }
    let (s0, s1) = cfg.scale_range;
    if s0 != 1.0 || s1 != 1.0 {
        scale(&mut s, rng.random_range(s0..=s1));
    }
    s
}

/// A ground-truth box with the points inside it, for injection elsewhere.
#[derive(Clone, Debug)]
pub struct BankObject {
    pub gt: Box3D,
    pub points: Vec<Point>,
}

/// Collects every gt of every scene with its interior points.
pub fn build_bank<'a>(scenes: impl IntoIterator<Item = &'a SceneSample>) -> Vec<BankObject> {
    let mut bank = Vec::new();
    for s in scenes {
        for gt in &s.gts {
            let points = s
                .cloud
                .points
                .iter()
                .filter(|p| gt.contains([p.x, p.y, p.z], 1e-6))
                .copied()
                .collect();
            bank.push(BankObject { gt: *gt, points });
        }
    }
    bank
}

fn footprint_contains(b: &Box3D, p: &Point) -> bool {
    let (sn, cs) = b.yaw.sin_cos();
    let (dx, dy) = (p.x - b.x, p.y - b.y);
    (dx * cs + dy * sn).abs() <= b.l / 2.0 && (-dx * sn + dy * cs).abs() <= b.w / 2.0
}

/// Pastes up to `gt_sample_max_per_class` bank objects of each class into the
/// scene. A candidate is skipped if its footprint touches any existing box;
/// scene points under an accepted footprint are removed.
pub fn gt_sample_injection<R: Rng + ?Sized>(
    mut s: SceneSample,
    bank: &[BankObject],
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> SceneSample {
    if bank.is_empty() || cfg.gt_sample_max_per_class == 0 {
        return s;
    }
    let mut classes: Vec<usize> = bank.iter().map(|b| b.gt.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        let mut pool: Vec<usize> = (0..bank.len()).filter(|&i| bank[i].gt.class_id == class).collect();
        let mut injected = 0;
        while injected < cfg.gt_sample_max_per_class && !pool.is_empty() {
            let cand = &bank[pool.swap_remove(rng.random_range(0..pool.len()))];
            if s.gts.iter().any(|g| bev_intersection(g, &cand.gt) > 0.0) {
                continue;
            }
            s.cloud.points.retain(|p| !footprint_contains(&cand.gt, p));
            s.cloud.points.extend_from_slice(&cand.points);
            s.gts.push(cand.gt);
            injected += 1;
        }
    }
    s
}
