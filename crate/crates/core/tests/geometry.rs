use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use cvf_core::geometry::{
    build_range_image, point_features_from_range, project_point, range_features_from_points, Point, PointCloud,
    SphericalConfig,
};
use cvf_core::Error;
use cvf_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kitti() -> SphericalConfig {
    SphericalConfig::default()
}

/// Points with elevation strictly inside the field of view.
fn in_fov_points(n: usize, cfg: &SphericalConfig, rng: &mut ChaCha8Rng) -> PointCloud {
    (0..n)
        .map(|_| {
            let az = rng.random_range(-PI..PI);
            let el = rng.random_range(cfg.fov_down + 1e-6..cfg.fov_up - 1e-6);
            let r = rng.random_range(1.0..60.0);
            Point::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin(), rng.random())
        })
        .collect()
}

#[test]
fn reference_projections() {
    let cfg = kitti();
    let p = project_point([10.0, 0.0, 0.0], &cfg).unwrap().unwrap();
    assert!((p.u_f - 256.0).abs() < 1e-9);
    assert!((p.v_f - (1.0 - 25.0 / 28.0) * 48.0).abs() < 1e-9);
    let p = project_point([10.0, 10.0, 0.0], &cfg).unwrap().unwrap();
    assert!((p.u_f - 192.0).abs() < 1e-9);
    assert!(matches!(project_point([0.0; 3], &cfg), Err(Error::DegeneratePoint)));
}

#[test]
fn fuzzed_index_table_invariants() {
    let cfg = kitti();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let mut cloud = in_fov_points(1000, &cfg, &mut rng);
        // Force collisions: repeat some rays at other ranges.
        for i in 0..100 {
            let p = cloud.points[i];
            let s = rng.random_range(0.3..3.0);
            cloud.points.push(Point::new(p.x * s, p.y * s, p.z * s, p.intensity));
        }
        let (img, table) = build_range_image(&cloud, &cfg).unwrap();

        let mut cells: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let proj = project_point([p.x, p.y, p.z], &cfg).unwrap().expect("in view");
            assert!(proj.u < cfg.w && proj.v < cfg.h);
            cells.entry((proj.u, proj.v)).or_default().push(i);
        }
        let occupied: HashSet<(usize, usize)> = cells.keys().copied().collect();
        assert_eq!(img.occupancy.iter().filter(|&&o| o).count(), occupied.len(), "trial {trial}");
        assert_eq!(table.num_valid(), cloud.len());

        for (&(u, v), members) in &cells {
            let owner = table.owner(u, v).expect("occupied pixel has an owner");
            // Nearest wins, ties to the lower index.
            let expect = *members
                .iter()
                .min_by(|&&a, &&b| cloud.points[a].range().total_cmp(&cloud.points[b].range()).then(a.cmp(&b)))
                .unwrap();
            assert_eq!(owner, expect);
            let min_r = members.iter().map(|&i| cloud.points[i].range()).fold(f64::INFINITY, f64::min);
            assert_eq!(img.get(0, v, u), min_r);
            let r = table.point_to_pixel[owner].unwrap();
            assert_eq!((r.u, r.v), (u, v));
        }
        for (i, r) in table.point_to_pixel.iter().enumerate() {
            let r = r.unwrap();
            assert!(members_contain(&cells, (r.u, r.v), i));
        }
    }
}

fn members_contain(cells: &HashMap<(usize, usize), Vec<usize>>, key: (usize, usize), i: usize) -> bool {
    cells.get(&key).is_some_and(|m| m.contains(&i))
}

#[test]
fn azimuth_rotation_shifts_columns() {
    let cfg = kitti();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cloud = in_fov_points(300, &cfg, &mut rng);
    let delta: f64 = 0.3;
    let shift = delta * cfg.w as f64 / (2.0 * PI);
    for p in &cloud.points {
        let a = project_point([p.x, p.y, p.z], &cfg).unwrap().unwrap();
        let (s, c) = delta.sin_cos();
        let b = project_point([c * p.x - s * p.y, s * p.x + c * p.y, p.z], &cfg).unwrap().unwrap();
        let expect = (a.u_f - shift).rem_euclid(cfg.w as f64);
        // Skip points near the wrap seam.
        if expect < 1.0 || expect > cfg.w as f64 - 1.0 {
            continue;
        }
        assert!((b.u_f - expect).abs() < 1e-9);
        assert!((b.v_f - a.v_f).abs() < 1e-9);
    }
}

#[test]
fn out_of_view_points_keep_their_rows() {
    let cfg = kitti();
    let cloud = PointCloud::new(vec![Point::new(10.0, 0.0, 0.0, 1.0), Point::new(1.0, 0.0, 5.0, 1.0)]);
    let (_, table) = build_range_image(&cloud, &cfg).unwrap();
    assert_eq!(table.num_points(), 2);
    assert!(table.point_to_pixel[1].is_none());
    let only_steep = PointCloud::new(vec![Point::new(1.0, 0.0, 5.0, 1.0)]);
    assert!(matches!(build_range_image(&only_steep, &cfg), Err(Error::EmptyImage)));
}

/// Scalar bilinear interpolation with edge clamping.
fn bilinear(map: &[f64], h: usize, w: usize, u: f64, v: f64) -> f64 {
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let (u0, v0) = (u.floor() as usize, v.floor() as usize);
    let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
    let (fu, fv) = (u - u0 as f64, v - v0 as f64);
    let at = |vv: usize, uu: usize| map[vv * w + uu];
    (1.0 - fu) * (1.0 - fv) * at(v0, u0) + fu * (1.0 - fv) * at(v0, u1) + (1.0 - fu) * fv * at(v1, u0)
        + fu * fv * at(v1, u1)
}

#[test]
fn half_scale_sampling_matches_scalar_bilinear() {
    let cfg = SphericalConfig { h: 16, w: 64, ..kitti() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cloud = in_fov_points(200, &cfg, &mut rng);
    cloud.points.push(Point::new(0.1, 0.0, 9.0, 0.0));
    let (_, table) = build_range_image(&cloud, &cfg).unwrap();
    let (c, hc, wc) = (3, 8, 32);
    let map = Tensor::from_fn([c, hc, wc], |_| rng.random_range(-1.0..1.0));
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(map.clone());
    let out = point_features_from_range(&mut tape, x, &table, 0.5).unwrap();
    let out = tape.value(out);
    assert_eq!(out.shape(), &[cloud.len(), c]);
    for (i, r) in table.point_to_pixel.iter().enumerate() {
        for ch in 0..c {
            let got = out.data()[i * c + ch];
            let expect = r.map_or(0.0, |r| {
                bilinear(&map.data()[ch * hc * wc..(ch + 1) * hc * wc], hc, wc, r.u_f * 0.5, r.v_f * 0.5)
            });
            assert!((got - expect).abs() < 1e-12, "point {i} channel {ch}: {got} vs {expect}");
        }
    }

    let bad = tape.constant(Tensor::zeros([c, 8, 16]));
    assert!(matches!(point_features_from_range(&mut tape, bad, &table, 0.5), Err(Error::Config(_))));
}

#[test]
fn integer_pixels_sample_exactly() {
    let cfg = kitti();
    // Azimuth 0 gives u_f = 256; elevation −11° gives v_f = 24.
    let el = (-11.0f64).to_radians();
    let cloud = PointCloud::new(vec![Point::new(10.0 * el.cos(), 0.0, 10.0 * el.sin(), 0.5)]);
    let (_, table) = build_range_image(&cloud, &cfg).unwrap();
    let r = table.point_to_pixel[0].unwrap();
    assert!((r.u_f - 256.0).abs() < 1e-9 && (r.v_f - 24.0).abs() < 1e-9);
    let mut tape = Tape::<f64>::new();
    let map = Tensor::from_fn([2, cfg.h, cfg.w], |i| i as f64);
    let x = tape.constant(map.clone());
    let out = point_features_from_range(&mut tape, x, &table, 1.0).unwrap();
    for ch in 0..2 {
        let expect = map.data()[ch * cfg.h * cfg.w + 24 * cfg.w + 256];
        assert!((tape.value(out).data()[ch] - expect).abs() < 1e-6);
    }

    let steep = PointCloud::new(vec![Point::new(10.0, 0.0, 0.0, 0.5), Point::new(0.1, 0.0, 9.0, 0.5)]);
    let (_, table) = build_range_image(&steep, &cfg).unwrap();
    let x = tape.constant(map);
    let out = point_features_from_range(&mut tape, x, &table, 1.0).unwrap();
    assert_eq!(&tape.value(out).data()[2..], &[0.0, 0.0]);
}

#[test]
fn write_back_touches_owned_pixels_only() {
    let cfg = SphericalConfig { h: 8, w: 32, ..kitti() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = in_fov_points(40, &cfg, &mut rng);
    let (_, table) = build_range_image(&cloud, &cfg).unwrap();
    let c = 4;
    let mut tape = Tape::<f64>::new();
    let feats = Tensor::from_fn([cloud.len(), c], |_| rng.random_range(-1.0..1.0));
    let prev = Tensor::from_fn([c, cfg.h, cfg.w], |_| rng.random_range(5.0..6.0));
    let p = tape.constant(feats.clone());
    let r = tape.constant(prev.clone());
    let out = range_features_from_points(&mut tape, p, &table, r).unwrap();
    let out = tape.value(out).clone();
    for v in 0..cfg.h {
        for u in 0..cfg.w {
            for ch in 0..c {
                let idx = ch * cfg.h * cfg.w + v * cfg.w + u;
                let expect = match table.owner(u, v) {
                    Some(i) => feats.data()[i * c + ch],
                    None => prev.data()[idx],
                };
                assert_eq!(out.data()[idx], expect);
            }
        }
    }

    // Single point: only its column changes.
    let one = PointCloud::new(vec![cloud.points[0]]);
    let (_, t1) = build_range_image(&one, &cfg).unwrap();
    let (u, v) = t1.owners().next().map(|(pix, _)| (pix % cfg.w, pix / cfg.w)).unwrap();
    let p = tape.constant(Tensor::full([1, c], -7.0));
    let r = tape.constant(prev.clone());
    let out = range_features_from_points(&mut tape, p, &t1, r).unwrap();
    let changed: Vec<usize> = tape
        .value(out)
        .data()
        .iter()
        .zip(prev.data())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(changed.len(), c);
    for (ch, &i) in changed.iter().enumerate() {
        assert_eq!(i, ch * cfg.h * cfg.w + v * cfg.w + u);
    }
}
