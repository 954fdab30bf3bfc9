use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cvf_core::config::ExperimentConfig;
use cvf_core::data::{
    load_dataset, load_scene, read_labels, read_manifest, scene_paths, synth_generate, write_labels,
    write_synthetic_dataset, KittiObject, SceneSample, MANIFEST,
};
use cvf_core::eval::{evaluate, ignored_by_difficulty, SceneEval};
use cvf_core::model::{CvfNet, STAGES};
use cvf_core::train::{load_weights, save_weights, train as train_model};

use crate::{overlay, BenchArgs, EvalArgs, Failure, InferArgs, Outcome, SynthArgs, TrainArgs};

fn out_dir(out: &Option<PathBuf>, default: &str) -> Result<PathBuf, Failure> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn synthetic_corpus(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Vec<SceneSample>, Failure> {
    (0..n)
        .map(|i| {
            let mut spec = cfg.synth.clone();
            spec.seed = seed ^ i as u64;
            let mut s = synth_generate(&spec)?;
            s.scene_id = format!("{i:06}");
            Ok(s)
        })
        .collect()
}

fn load_model(cfg: &ExperimentConfig, seed: u64, checkpoint: Option<&Path>) -> Result<CvfNet<f32>, Failure> {
    let mut model = CvfNet::<f32>::new(&cfg.model, seed)?;
    if let Some(path) = checkpoint {
        load_weights(&mut model, path)?;
    }
    Ok(model)
}

pub fn train(mut cfg: ExperimentConfig, a: &TrainArgs) -> Outcome {
    if let Some(s) = a.common.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let classes = cfg.model.class_names();
    let scenes = match a.data.as_ref().or(cfg.train.data.as_ref()) {
        Some(dir) => load_dataset(dir, &classes, cfg.calibration.as_ref())?,
        None => synthetic_corpus(&cfg, a.scenes, cfg.synth.seed)?,
    };
    if scenes.is_empty() {
        return Err(Failure::Data("no training scenes".into()));
    }
    let out = out_dir(&a.common.out, "runs/train")?;
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| out.join("model.ckpt"));

    let mut model = load_model(&cfg, cfg.train.seed, None)?;
    println!(
        "training on {} scenes for {} epochs ({} parameters)",
        scenes.len(),
        cfg.train.epochs,
        model.num_parameters()
    );
    let logs = train_model(&mut model, &scenes, &cfg, |log| println!("{}", log.to_line()))?;

    let mut table = String::from("epoch\ttotal\tcls\treg\tdir\tlr\n");
    for l in &logs {
        table.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}\n",
            l.epoch, l.loss.total, l.loss.cls, l.loss.reg, l.loss.dir, l.lr
        ));
    }
    write(&out.join("losses.tsv"), &table)?;
    save_weights(&model, &checkpoint)?;
    println!("checkpoint: {}", checkpoint.display());
    Ok(())
}

/// Scene ids from the manifest, or from the velodyne directory when there is
/// no manifest.
fn scene_ids(dir: &Path) -> Result<Vec<String>, Failure> {
    if dir.join(MANIFEST).exists() {
        return Ok(read_manifest(dir)?.into_iter().map(|e| e.scene_id).collect());
    }
    let velo = dir.join("velodyne");
    let entries = fs::read_dir(&velo).map_err(|e| Failure::Data(format!("{}: {e}", velo.display())))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "bin") {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn infer(cfg: ExperimentConfig, a: &InferArgs) -> Outcome {
    let classes = cfg.model.class_names();
    let calib = cfg.calibration.as_ref();
    let model = load_model(&cfg, 0, Some(&a.checkpoint))?;
    let ids = scene_ids(&a.data)?;
    let out = out_dir(&a.common.out, "runs/infer")?;
    let label_dir = out.join("label");
    fs::create_dir_all(&label_dir)?;
    let overlay_dir = out.join("overlay");
    if a.overlay {
        fs::create_dir_all(&overlay_dir)?;
    }

    for id in &ids {
        let (bin, label) = scene_paths(&a.data, id);
        let label = label.exists().then_some(label);
        let scene = load_scene(&bin, label.as_deref(), calib, &classes)?;
        let dets = model.detect(&scene.cloud, &cfg.infer)?;
        let objects: Vec<KittiObject> = dets
            .iter()
            .map(|b| KittiObject::from_box(b, &classes[b.class_id], calib, true))
            .collect();
        write_labels(&label_dir.join(format!("{id}.txt")), &objects)?;
        if a.overlay {
            let img = overlay::render(&model.config.voxel, model.grid_dims(), &scene.cloud, &scene.gts, &dets);
            let path = overlay_dir.join(format!("{id}.png"));
            img.save(&path)
                .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
        }
        println!("{id}: {} points, {} detections", scene.cloud.len(), dets.len());
    }
    println!("labels: {}", label_dir.display());
    Ok(())
}

fn label_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("label");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

pub fn eval(cfg: ExperimentConfig, a: &EvalArgs) -> Outcome {
    let classes = cfg.model.class_names();
    let calib = cfg.calibration.as_ref();
    let gt_dir = label_dir(&a.gt);
    let pred_dir = label_dir(&a.pred);

    let mut ids = Vec::new();
    let entries = fs::read_dir(&gt_dir).map_err(|e| Failure::Data(format!("{}: {e}", gt_dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "txt") {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();

    let known = |objects: Vec<KittiObject>| -> Vec<(usize, KittiObject)> {
        objects
            .into_iter()
            .filter_map(|o| classes.iter().position(|c| *c == o.class_name).map(|k| (k, o)))
            .collect()
    };
    let mut scenes = Vec::with_capacity(ids.len());
    for id in &ids {
        let gts = known(read_labels(&gt_dir.join(format!("{id}.txt")))?);
        let pred_path = pred_dir.join(format!("{id}.txt"));
        let preds = if pred_path.exists() { known(read_labels(&pred_path)?) } else { Vec::new() };
        let gt_objects: Vec<KittiObject> = gts.iter().map(|(_, o)| o.clone()).collect();
        scenes.push(SceneEval {
            dets: preds.iter().map(|(k, o)| o.to_box(*k, calib)).collect(),
            gts: gts.iter().map(|(k, o)| o.to_box(*k, calib)).collect(),
            gt_ignored: ignored_by_difficulty(&gt_objects, cfg.eval.difficulty),
        });
    }

    let report = evaluate(&scenes, &classes, &cfg.eval)?;
    let text = report.to_text();
    print!("{text}");
    let out = out_dir(&a.common.out, "runs/eval")?;
    write(&out.join("metrics.txt"), &report.to_key_values())?;
    write(&out.join("report.txt"), &text)?;
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn bench(cfg: ExperimentConfig, a: &BenchArgs) -> Outcome {
    let seed = a.common.seed.unwrap_or(cfg.train.seed);
    let model = load_model(&cfg, seed, a.checkpoint.as_deref())?;
    let mut spec = cfg.synth.clone();
    spec.n_background_points = cfg.bench.points;
    spec.objects_min = cfg.bench.objects;
    spec.objects_max = cfg.bench.objects;
    let clouds = (0..4u64)
        .map(|i| synth_generate(&cvf_core::data::SyntheticSceneSpec { seed: seed ^ i, ..spec.clone() }))
        .collect::<Result<Vec<_>, _>>()?;

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); STAGES.len()];
    let mut totals = Vec::new();
    let mut detections = vec![0usize; clouds.len()];
    for it in 0..cfg.bench.warmup + cfg.bench.iterations {
        let k = it % clouds.len();
        let (dets, times) = model.detect_timed(&clouds[k].cloud, &cfg.infer)?;
        detections[k] = dets.len();
        if it < cfg.bench.warmup {
            continue;
        }
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        for (s, t) in times.iter().enumerate() {
            samples[s].push(ms(*t));
        }
        totals.push(times.iter().copied().map(ms).sum::<f64>());
    }

    let points: Vec<usize> = clouds.iter().map(|s| s.cloud.len()).collect();
    let mut text = format!(
        "clouds: {} (points {:?}, objects {})\ndetections per cloud: {:?}\nwarm-up {}, timed iterations {}\n\n{:<12}{:>12}{:>12}\n",
        clouds.len(),
        points,
        cfg.bench.objects,
        detections,
        cfg.bench.warmup,
        cfg.bench.iterations,
        "stage",
        "mean ms",
        "p95 ms"
    );
    for (name, mut xs) in STAGES.iter().zip(samples).chain(std::iter::once((&"total", totals))) {
        xs.sort_by(f64::total_cmp);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        text.push_str(&format!("{name:<12}{mean:>12.3}{:>12.3}\n", percentile(&xs, 0.95)));
    }
    print!("{text}");
    if a.common.out.is_some() {
        let out = out_dir(&a.common.out, "")?;
        write(&out.join("bench.txt"), &text)?;
    }
    Ok(())
}

pub fn synth(cfg: ExperimentConfig, a: &SynthArgs) -> Outcome {
    let Some(out) = a.common.out.as_ref() else {
        return Err(Failure::Config("synth needs --out".into()));
    };
    let seed = a.common.seed.unwrap_or(cfg.synth.seed);
    let scenes = write_synthetic_dataset(out, &cfg.synth, a.scenes, seed, &cfg.model.class_names())?;
    let objects: usize = scenes.iter().map(|s| s.gts.len()).sum();
    println!("{} scenes, {objects} objects: {}", scenes.len(), out.display());
    Ok(())
}
