mod common;

use std::time::Instant;

use common::tiny::{pipeline_gradcheck, tiny_model_config, tiny_scene};
use cvf_core::model::CvfNet;
use cvf_tensor::Tape;

#[test]
fn tiny_scene_exercises_every_stage() {
    let cfg = tiny_model_config();
    let model = CvfNet::<f64>::new(&cfg, 3).unwrap();
    let scene = tiny_scene();
    assert_eq!(scene.cloud.len(), 10);
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bound, &scene.cloud).unwrap();
    assert!(!fwd.head.valid_cells.is_empty());
    let targets = cvf_core::head::build_targets(&fwd.anchors, &scene.gts, &cfg.anchors).unwrap();
    assert!(targets.num_positive >= 1);
}

#[test]
fn full_pipeline_finite_differences() {
    let start = Instant::now();
    let report = pipeline_gradcheck(1e-3);
    println!(
        "checked {} entries, max rel {:.2e}, max abs {:.2e} in {:.1?}",
        report.checked,
        report.max_rel_error,
        report.max_abs_error,
        start.elapsed()
    );
    assert!(report.passed(), "{:?}", &report.failures[..report.failures.len().min(10)]);
    assert!(report.checked > 100);
}

