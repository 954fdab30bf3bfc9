//! One PASS/FAIL line per acceptance criterion, then a single assertion over
//! all of them. Run with `--nocapture` to see the table.

mod common;

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cvf_core::bev::{pool_occupancy, scatter_to_pillars, VoxelGridConfig};
use cvf_core::config::SphericalSection;
use cvf_core::eval::average_precision;
use cvf_core::geometry::{build_range_image, project_point, Point, PointCloud, SphericalConfig};
use cvf_core::head::{loss_total, nms, rotated_iou_bev, AnchorConfig, Box3D, LossConfig, SparseHead};
use cvf_core::model::CvfNet;
use cvf_core::nn::Init;
use cvf_core::train::train;
use cvf_tensor::gradcheck::{op_suite, GradCheck};
use cvf_tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracles::{conv_oracle, matmul_oracle, nms_oracle, scatter_oracle};

type Verdict = (bool, String);

struct Row {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn criterion(name: &'static str, f: impl FnOnce() -> Verdict) -> Row {
    let t0 = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let row = Row {
        name,
        pass,
        detail,
        elapsed: t0.elapsed(),
    };
    println!(
        "{} {:<28} {:>8.1}s  {}",
        if row.pass { "PASS" } else { "FAIL" },
        row.name,
        row.elapsed.as_secs_f64(),
        row.detail
    );
    row
}

fn gradient_suite() -> Verdict {
    let t0 = Instant::now();
    let ops = op_suite(&GradCheck::default()).expect("op suite runs");
    let failed: Vec<&str> = ops.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| n.as_str()).collect();
    let worst_op = ops.iter().map(|(_, r)| r.max_abs_error).fold(0.0, f64::max);
    let pipe = common::tiny::pipeline_gradcheck(1e-3);
    let secs = t0.elapsed().as_secs_f64();
    let pass = failed.is_empty() && pipe.passed() && secs < 60.0;
    (
        pass,
        format!(
            "{} op cases (max abs err {worst_op:.1e}, failed {failed:?}); pipeline {} entries, max abs err {:.1e}, {} failures; {secs:.1}s < 60s",
            ops.len(),
            pipe.checked,
            pipe.max_abs_error,
            pipe.failures.len()
        ),
    )
}

fn geometry_suite() -> Verdict {
    let cfg = SphericalConfig::default();
    let u0 = project_point([10.0, 0.0, 0.0], &cfg).unwrap().unwrap().u_f;
    let u1 = project_point([10.0, 10.0, 0.0], &cfg).unwrap().unwrap().u_f;
    let refs = (u0 - 256.0).abs() < 1e-9 && (u1 - 192.0).abs() < 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut cloud: PointCloud = (0..1000)
        .map(|_| {
            let az = rng.random_range(-PI..PI);
            let el = rng.random_range(cfg.fov_down + 1e-6..cfg.fov_up - 1e-6);
            let r = rng.random_range(1.0..60.0);
            Point::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin(), 0.0)
        })
        .collect();
    for i in 0..100 {
        let p = cloud.points[i];
        cloud.points.push(Point::new(p.x * 0.5, p.y * 0.5, p.z * 0.5, 0.0));
    }
    let (img, table) = build_range_image(&cloud, &cfg).unwrap();
    let mut cells: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let proj = project_point([p.x, p.y, p.z], &cfg).unwrap().unwrap();
        cells.entry((proj.u, proj.v)).or_default().push(i);
    }
    let mut bad = 0;
    for (&(u, v), members) in &cells {
        let nearest = *members
            .iter()
            .min_by(|&&a, &&b| cloud.points[a].range().total_cmp(&cloud.points[b].range()).then(a.cmp(&b)))
            .unwrap();
        if table.owner(u, v) != Some(nearest) || img.get(0, v, u) != cloud.points[nearest].range() {
            bad += 1;
        }
    }
    for (i, r) in table.point_to_pixel.iter().enumerate() {
        match r {
            Some(r) if cells[&(r.u, r.v)].contains(&i) => {}
            _ => bad += 1,
        }
    }
    let occupied = img.occupancy.iter().filter(|&&o| o).count();
    let pass = refs && bad == 0 && occupied == cells.len();
    (
        pass,
        format!("u = {u0:.12}, {u1:.12}; {} points, {} pixels, {bad} table violations", cloud.len(), cells.len()),
    )
}

fn shape_suite() -> Verdict {
    let mut cfg = common::toy_config();
    cfg.model.spherical = SphericalSection::default();
    cfg.model.voxel = VoxelGridConfig::default();
    let model = CvfNet::<f32>::new(&cfg.model, 3).unwrap();
    let scene = &common::corpus(&cfg, 1, 72)[0];
    let mut tape = Tape::new();
    let bound = model.store.bind_frozen(&mut tape);
    let fwd = model.forward(&mut tape, &bound, &scene.cloud).unwrap();
    let pass = fwd.range_shape == [5, 48, 512]
        && fwd.pillar_shape == [20, 496, 432]
        && fwd.backbone_shape[1..] == [248, 216];
    (
        pass,
        format!(
            "range {:?}, pillars {:?} (d, h, w), backbone {:?}",
            fwd.range_shape, fwd.pillar_shape, fwd.backbone_shape
        ),
    )
}

fn sparse_equivalence() -> Verdict {
    let grid = VoxelGridConfig {
        x_range: (0.0, 12.8),
        y_range: (-6.4, 6.4),
        z_range: (-3.0, 1.0),
        voxel_size: (0.2, 0.2, 0.4),
    };
    let dims = grid.dims().unwrap();
    let (h, w) = (dims.h / 2, dims.w / 2);
    let anchors = AnchorConfig::kitti();
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let head = SparseHead::new(&mut Init { store: &mut store, rng: &mut rng }, "h", 6, 8, &anchors).unwrap();
    let (a, k) = (head.anchors_per_cell, head.num_classes);
    let mut worst = 0.0f32;
    let mut rows = 0;
    for _ in 0..50 {
        let n = rng.random_range(0..400);
        let cloud: PointCloud = (0..n)
            .map(|_| Point::new(rng.random_range(0.0..12.8), rng.random_range(-6.4..6.4), -1.0, 0.0))
            .collect();
        let mut tape = Tape::<f32>::new();
        let bound = store.bind_frozen(&mut tape);
        let feats = tape.constant(Tensor::zeros([cloud.len(), 1]));
        let vol = scatter_to_pillars(&mut tape, feats, &cloud, &grid).unwrap();
        let occ = pool_occupancy(&vol.occupancy, dims.h, dims.w);
        let bev = tape.constant(Tensor::from_fn([6, h, w], |_| rng.random_range(-1.0f32..1.0)));
        let s = head.forward(&mut tape, &bound, bev, &occ).unwrap().materialize(&tape, a, k).unwrap();
        let d = head.forward_dense(&mut tape, &bound, bev).unwrap().materialize(&tape, a, k).unwrap();
        rows += s.valid_cells.len();
        if s.valid_cells.len() != occ.iter().filter(|&&o| o).count() {
            return (false, "valid cell count differs from occupancy".into());
        }
        for (sv, dv, width) in [
            (&s.cls_logits, &d.cls_logits, a * k),
            (&s.reg, &d.reg, a * 7),
            (&s.dir_logits, &d.dir_logits, a * 2),
        ] {
            for (row, &cell) in s.valid_cells.iter().enumerate() {
                for j in 0..width {
                    worst = worst.max((sv.data()[row * width + j] - dv.data()[cell * width + j]).abs());
                }
            }
        }
    }
    (worst < 1e-6, format!("50 scenes, {rows} rows, max |sparse − dense| = {worst:.2e} < 1e-6"))
}

fn oracle_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let mut random = |shape: &[usize]| Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0));
    let mut tape = Tape::<f64>::new();

    let (x, wt, b) = (random(&[6, 4]), random(&[4, 5]), random(&[5]));
    let expect = matmul_oracle(&x, &wt, &b);
    let (xv, wv, bv) = (tape.constant(x), tape.constant(wt), tape.constant(b));
    let y = tape.linear(xv, wv, bv).unwrap();
    let lin = tape.value(y).data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let (x, k, b) = (random(&[2, 5, 5]), random(&[3, 2, 3, 3]), random(&[3]));
    let expect = conv_oracle(&x, &k, &b, 2, 1);
    let (xv, kv, bv) = (tape.constant(x), tape.constant(k), tape.constant(b));
    let y = tape.conv2d(xv, kv, bv, 2, 1).unwrap();
    let conv = tape.value(y).max_abs_diff(&expect).unwrap();

    let grid = VoxelGridConfig {
        x_range: (0.0, 4.0),
        y_range: (-2.0, 2.0),
        z_range: (-1.0, 1.0),
        voxel_size: (0.5, 0.5, 0.5),
    };
    let cloud: PointCloud = (0..500)
        .map(|_| Point::new(rng.random_range(-0.5..4.5), rng.random_range(-2.5..2.5), rng.random_range(-1.2..1.2), 0.0))
        .collect();
    let feats = tape.constant(Tensor::zeros([500, 1]));
    let vol = scatter_to_pillars(&mut tape, feats, &cloud, &grid).unwrap();
    let got: HashMap<(usize, usize, usize), usize> = vol.winners.iter().map(|&(v, i)| ((v.ix, v.iy, v.iz), i)).collect();
    let scatter = got == scatter_oracle(&cloud, &grid);

    let mut nms_ok = true;
    for trial in 0..100 {
        let boxes: Vec<Box3D> = (0..40)
            .map(|_| {
                Box3D::new(
                    [rng.random_range(0.0..8.0), rng.random_range(0.0..8.0), -1.0],
                    [rng.random_range(0.4..2.5), rng.random_range(0.5..5.0), 1.5],
                    rng.random_range(-PI..PI),
                    rng.random_range(0..2),
                )
                .with_score(rng.random_range(0..20) as f64 / 20.0)
            })
            .collect();
        let thresh = [0.1, 0.3, 0.5, 0.7][trial % 4];
        nms_ok &= nms(&boxes, thresh) == nms_oracle(&boxes, thresh);
    }

    let unit = |x: f64| Box3D::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0, 0);
    let iou = rotated_iou_bev(&unit(0.0), &unit(0.5));
    let ap = average_precision(&[(0.9, true)], 2, 11).unwrap();
    let loss = loss_total(1.0, 1.0, 1.0, &LossConfig::default()).unwrap().total;

    let pass = lin < 1e-12
        && conv < 1e-12
        && scatter
        && nms_ok
        && (iou - 1.0 / 3.0).abs() < 1e-9
        && ap == 6.0 / 11.0
        && loss == 3.2;
    (
        pass,
        format!(
            "linear {lin:.1e}, conv {conv:.1e}, scatter exact {scatter}, nms exact {nms_ok}, iou {iou:.12}, ap {ap}, loss {loss}"
        ),
    )
}

fn overfit() -> Verdict {
    let cfg = common::toy_config();
    let scenes = common::corpus(&cfg, 32, 1234);
    let classes: HashSet<usize> = scenes.iter().flat_map(|s| s.gts.iter().map(|g| g.class_id)).collect();
    let counts_ok = scenes.iter().all(|s| (2..=5).contains(&s.gts.len())) && classes.len() == 1;
    let t0 = Instant::now();
    let mut model = CvfNet::<f32>::new(&cfg.model, cfg.train.seed).unwrap();
    let logs = train(&mut model, &scenes, &cfg, |_| {}).unwrap();
    let report = common::evaluate_on(&model, &scenes, &cfg);
    let secs = t0.elapsed().as_secs_f64();
    let ap = report.mean_ap().unwrap_or(0.0);
    let (first, last) = (logs[0].loss.total, logs[logs.len() - 1].loss.total);
    let pass = counts_ok && logs.len() == 200 && ap >= 0.9 && secs <= 1800.0;
    (
        pass,
        format!(
            "32 scenes, {} epochs, BEV AP@0.5 (R40) = {ap:.4} >= 0.9, loss {first:.4} -> {last:.5}, {secs:.0}s <= 1800s",
            logs.len()
        ),
    )
}

fn performance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let grid = VoxelGridConfig::default();
    let sph = SphericalConfig::default();
    let cloud: PointCloud = (0..120_000)
        .map(|_| {
            Point::new(
                rng.random_range(0.5..80.0),
                rng.random_range(-45.0..45.0),
                rng.random_range(-3.5..1.5),
                rng.random(),
            )
        })
        .collect();
    let channels = cvf_core::fusion::default_fusion_stages()
        .last()
        .and_then(|s| s.fusion_mlp_widths.last().copied())
        .unwrap_or(64);
    let feats = Tensor::<f32>::from_fn([cloud.len(), channels], |i| (i % 7) as f32);
    let mut times = Vec::new();
    for _ in 0..6 {
        let input = feats.clone();
        let t0 = Instant::now();
        let (img, _) = build_range_image(&cloud, &sph).unwrap();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(input);
        let vol = scatter_to_pillars(&mut tape, x, &cloud, &grid).unwrap();
        times.push(t0.elapsed());
        assert!(!img.occupancy.is_empty() && !vol.winners.is_empty());
    }
    times.remove(0);
    times.sort();
    let median = times[times.len() / 2].as_secs_f64() * 1e3;
    (median < 50.0, format!("120000 points, {channels}-channel features: median {median:.1} ms < 50 ms"))
}

/// `CVF_ACCEPTANCE=overfit,performance` runs a subset.
fn selected(name: &str) -> bool {
    std::env::var("CVF_ACCEPTANCE").map_or(true, |v| v.split(',').any(|s| name.starts_with(s.trim())))
}

#[test]
fn acceptance() {
    let all: [(&'static str, fn() -> Verdict); 7] = [
        ("gradient suite", gradient_suite),
        ("geometry suite", geometry_suite),
        ("shape suite", shape_suite),
        ("sparse-head equivalence", sparse_equivalence),
        ("oracle suite", oracle_suite),
        ("performance", performance),
        ("overfit", overfit),
    ];
    let rows: Vec<Row> = all
        .into_iter()
        .filter(|(name, _)| selected(name))
        .map(|(name, f)| criterion(name, f))
        .collect();
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    println!("{} of {} criteria pass", rows.len() - failed.len(), rows.len());
    assert!(failed.is_empty(), "failed: {failed:?}");
}
