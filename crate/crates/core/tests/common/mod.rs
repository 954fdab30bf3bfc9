#![allow(dead_code)]
pub mod oracles;
pub mod tiny;

use cvf_core::config::ExperimentConfig;
use cvf_core::data::{synth_generate, SceneSample};
use cvf_core::eval::{evaluate, EvalReport, SceneEval};
use cvf_core::model::CvfNet;
use cvf_tensor::Element;

pub const TOY_TOML: &str = include_str!("../../../../configs/toy.toml");

pub fn toy_config() -> ExperimentConfig {
    ExperimentConfig::from_toml(TOY_TOML).expect("toy config is valid")
}

/// `n` seeded scenes drawn from the config's synthetic spec.
pub fn corpus(cfg: &ExperimentConfig, n: usize, seed: u64) -> Vec<SceneSample> {
    (0..n)
        .map(|i| {
            let mut spec = cfg.synth.clone();
            spec.seed = seed ^ i as u64;
            let mut s = synth_generate(&spec).expect("synthetic scene");
            s.scene_id = format!("{i:06}");
            s
        })
        .collect()
}

pub fn evaluate_on<T: Element>(model: &CvfNet<T>, scenes: &[SceneSample], cfg: &ExperimentConfig) -> EvalReport {
    let evals: Vec<SceneEval> = scenes
        .iter()
        .map(|s| {
            let gts = s.gts_in_range(&model.config.voxel);
            SceneEval {
                dets: model.detect(&s.cloud, &cfg.infer).expect("inference"),
                gt_ignored: vec![false; gts.len()],
                gts,
            }
        })
        .collect();
    evaluate(&evals, &cfg.model.class_names(), &cfg.eval).expect("evaluation")
}
