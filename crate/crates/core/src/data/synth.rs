//! Seeded synthetic scenes: a flat ground scatter plus box-shaped objects
//! sampled by casting the rays of a spinning multi-beam sensor.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SceneSample;
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::head::Box3D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClass {
    pub class_id: usize,
    /// Relative frequency.
    pub weight: f64,
    /// Nominal (w, l, h).
    pub size: [f64; 3],
    /// Each dimension is scaled by a factor drawn from `1 ± size_jitter`.
    pub size_jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub n_background_points: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub classes: Vec<SynthClass>,
    pub yaw_range: (f64, f64),
    /// Region object centres are drawn from.
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Minimum clearance between object footprints' bounding circles.
    pub min_gap: f64,
    pub sensor_origin: [f64; 3],
    pub ground_z: f64,
    pub beams: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
    pub azimuth_steps: usize,
    pub max_range: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            n_background_points: 4000,
            objects_min: 2,
            objects_max: 5,
            classes: vec![SynthClass {
                class_id: 0,
                weight: 1.0,
                size: [1.6, 3.9, 1.56],
                size_jitter: 0.1,
            }],
            yaw_range: (-PI, PI),
            x_range: (5.0, 40.0),
            y_range: (-20.0, 20.0),
            min_gap: 0.5,
            sensor_origin: [0.0; 3],
            ground_z: -1.73,
            beams: 64,
            fov_up_deg: 3.0,
            fov_down_deg: -25.0,
            azimuth_steps: 2048,
            max_range: 70.0,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic scenes: {m}")));
        if self.objects_min > self.objects_max {
            return bad("objects_min exceeds objects_max");
        }
        if self.objects_max > 0 && (self.classes.is_empty() || self.classes.iter().all(|c| !(c.weight > 0.0))) {
            return bad("objects need at least one class with positive weight");
        }
        for c in &self.classes {
            if c.size.iter().any(|&s| !(s > 0.0)) || !(0.0..1.0).contains(&c.size_jitter) || c.weight < 0.0 {
                return bad("class sizes must be positive, jitter in [0, 1) and weights non-negative");
            }
        }
        if !(self.x_range.0 < self.x_range.1 && self.y_range.0 < self.y_range.1 && self.yaw_range.0 <= self.yaw_range.1) {
            return bad("placement and yaw ranges must be ordered");
        }
        if self.beams == 0 || self.azimuth_steps == 0 || !(self.fov_up_deg > self.fov_down_deg) || !(self.max_range > 0.0) {
            return bad("sensor needs beams, azimuth steps, an ordered field of view and positive range");
        }
        Ok(())
    }
}

/// A generated scene and, per point, the object whose surface it hit.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub sample: SceneSample,
    pub point_owner: Vec<Option<usize>>,
}

/// Distance along the unit ray `o + t·d` to where it enters `b`, if it does.
fn ray_box(o: [f64; 3], d: [f64; 3], b: &Box3D) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let rel = [o[0] - b.x, o[1] - b.y, o[2] - b.z];
    let lo = [rel[0] * c + rel[1] * s, -rel[0] * s + rel[1] * c, rel[2]];
    let ld = [d[0] * c + d[1] * s, -d[0] * s + d[1] * c, d[2]];
    let half = [b.l / 2.0, b.w / 2.0, b.h / 2.0];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if ld[k].abs() < 1e-15 {
            if lo[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - lo[k]) / ld[k];
        let z = (half[k] - lo[k]) / ld[k];
        t0 = t0.max(a.min(z));
        t1 = t1.min(a.max(z));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn place_objects(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Vec<Box3D> {
    let count = rng.random_range(spec.objects_min..=spec.objects_max);
    let total: f64 = spec.classes.iter().map(|c| c.weight).sum();
    let mut boxes: Vec<Box3D> = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..100 {
            let mut pick = rng.random::<f64>() * total;
            let class = spec
                .classes
                .iter()
                .find(|c| {
                    pick -= c.weight;
                    pick < 0.0
                })
                .unwrap_or_else(|| spec.classes.last().expect("validated"));
            let j = class.size_jitter;
            let size = class.size.map(|s| s * rng.random_range(1.0 - j..=1.0 + j));
            let yaw = rng.random_range(spec.yaw_range.0..=spec.yaw_range.1);
            let x = rng.random_range(spec.x_range.0..spec.x_range.1);
            let y = rng.random_range(spec.y_range.0..spec.y_range.1);
            let z = spec.ground_z + size[2] / 2.0;
            let cand = Box3D::new([x, y, z], size, yaw, class.class_id);
            let reach = |b: &Box3D| b.diagonal() / 2.0;
            let clear = boxes
                .iter()
                .all(|b| (b.x - x).hypot(b.y - y) >= reach(b) + reach(&cand) + spec.min_gap);
            let off_sensor = (x - spec.sensor_origin[0]).hypot(y - spec.sensor_origin[1]) > reach(&cand) + 1.0;
            if clear && off_sensor {
                boxes.push(cand);
                break;
            }
        }
    }
    boxes
}

pub fn synth_generate_detailed(spec: &SyntheticSceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let boxes = place_objects(spec, &mut rng);
    let o = spec.sensor_origin;
    let mut points = Vec::new();
    let mut owner = Vec::new();

    // Ground returns, dropped where an object stands on or shadows them.
    let height = (o[2] - spec.ground_z).max(0.0);
    let rho_min = if spec.fov_down_deg < 0.0 {
        (height / (-spec.fov_down_deg).to_radians().tan()).max(1.0)
    } else {
        1.0
    };
    let rho_max = spec.max_range.max(rho_min + 1.0);
    for _ in 0..spec.n_background_points {
        let phi = rng.random_range(-PI..PI);
        let rho = rng.random_range(rho_min..rho_max);
        let z = spec.ground_z + rng.random_range(-0.02..0.02);
        let p = [o[0] + rho * phi.cos(), o[1] + rho * phi.sin(), z];
        let intensity = rng.random_range(0.0..0.3);
        let to = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
        let dist = (to[0] * to[0] + to[1] * to[1] + to[2] * to[2]).sqrt();
        let dir = to.map(|v| v / dist);
        let hidden = boxes
            .iter()
            .any(|b| b.contains(p, 0.05) || ray_box(o, dir, b).is_some_and(|t| t < dist));
        if !hidden {
            points.push(Point::new(round_f32(p[0]), round_f32(p[1]), round_f32(p[2]), round_f32(intensity)));
            owner.push(None);
        }
    }

    // Object returns: the nearest box along each beam.
    let intensities: Vec<f64> = boxes.iter().map(|_| rng.random_range(0.3..0.9)).collect();
    let (down, up) = (spec.fov_down_deg.to_radians(), spec.fov_up_deg.to_radians());
    for b in 0..spec.beams {
        let elev = down + (b as f64 + 0.5) * (up - down) / spec.beams as f64;
        for a in 0..spec.azimuth_steps {
            let az = -PI + (a as f64 + 0.5) * 2.0 * PI / spec.azimuth_steps as f64;
            let d = [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()];
            let hit = boxes
                .iter()
                .enumerate()
                .filter_map(|(i, bx)| ray_box(o, d, bx).map(|t| (t, i)))
                .min_by(|x, y| x.0.total_cmp(&y.0));
            if let Some((t, i)) = hit {
                if t <= spec.max_range {
                    points.push(Point::new(
                        round_f32(o[0] + t * d[0]),
                        round_f32(o[1] + t * d[1]),
                        round_f32(o[2] + t * d[2]),
                        round_f32(intensities[i]),
                    ));
                    owner.push(Some(i));
                }
            }
        }
    }

    Ok(SynthScene {
        sample: SceneSample {
            scene_id: format!("synth-{}", spec.seed),
            cloud: PointCloud::new(points),
            gts: boxes,
        },
        point_owner: owner,
    })
}

pub fn synth_generate(spec: &SyntheticSceneSpec) -> Result<SceneSample> {
    Ok(synth_generate_detailed(spec)?.sample)
}
