//! Scene loading, augmentation, ground-truth injection and synthetic scenes.
//!
//! A dataset directory holds `manifest.txt` (one `scene_id seed` pair per
//! line), `velodyne/<scene_id>.bin` and `label/<scene_id>.txt`.

mod augment;
mod label;
mod synth;

pub use augment::{
    augment, build_bank, flip_y, gt_sample_injection, rotate_z, scale, AugmentationConfig, BankObject,
};
pub use label::{read_labels, write_labels, Calibration, KittiObject};
pub use synth::{synth_generate, synth_generate_detailed, SynthClass, SynthScene, SyntheticSceneSpec};

use std::fs;
use std::path::{Path, PathBuf};

use crate::bev::VoxelGridConfig;
use crate::error::{Error, Result};
use crate::geometry::{read_bin, write_bin, PointCloud};
use crate::head::Box3D;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub scene_id: String,
    pub cloud: PointCloud,
    pub gts: Vec<Box3D>,
}

impl SceneSample {
    /// Per gt, whether its centre lies outside the detection range.
    pub fn out_of_range(&self, grid: &VoxelGridConfig) -> Vec<bool> {
        self.gts.iter().map(|b| !grid.contains_xy(b.x, b.y)).collect()
    }

    /// Ground truth whose centre lies inside the detection range.
    pub fn gts_in_range(&self, grid: &VoxelGridConfig) -> Vec<Box3D> {
        self.gts.iter().filter(|b| grid.contains_xy(b.x, b.y)).copied().collect()
    }
}

/// Loads a point cloud and, optionally, its labels. Objects whose class is
/// not in `classes` (e.g. `DontCare`) are skipped.
pub fn load_scene(
    bin_path: &Path,
    label_path: Option<&Path>,
    calib: Option<&Calibration>,
    classes: &[String],
) -> Result<SceneSample> {
    let cloud = read_bin(bin_path)?;
    let gts = match label_path {
        Some(p) => read_labels(p)?
            .iter()
            .filter_map(|o| {
                classes
                    .iter()
                    .position(|c| *c == o.class_name)
                    .map(|k| o.to_box(k, calib))
            })
            .collect(),
        None => Vec::new(),
    };
    let scene_id = bin_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SceneSample { scene_id, cloud, gts })
}

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub seed: u64,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let seed = match parts.as_slice() {
            [_, seed] => seed.parse::<u64>().ok(),
            _ => None,
        };
        let Some(seed) = seed else {
            return Err(Error::Parse {
                path: path.clone(),
                line: n + 1,
                message: "expected `scene_id seed`".into(),
            });
        };
        out.push(ManifestEntry {
            scene_id: parts[0].to_string(),
            seed,
        });
    }
    Ok(out)
}

pub fn scene_paths(dir: &Path, scene_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join("velodyne").join(format!("{scene_id}.bin")),
        dir.join("label").join(format!("{scene_id}.txt")),
    )
}

/// Loads every scene listed in a dataset manifest. Missing label files mean
/// unlabelled scenes.
pub fn load_dataset(dir: &Path, classes: &[String], calib: Option<&Calibration>) -> Result<Vec<SceneSample>> {
    read_manifest(dir)?
        .iter()
        .map(|e| {
            let (bin, label) = scene_paths(dir, &e.scene_id);
            let label = label.exists().then_some(label);
            let mut s = load_scene(&bin, label.as_deref(), calib, classes)?;
            s.scene_id = e.scene_id.clone();
            Ok(s)
        })
        .collect()
}

/// Writes labels for boxes in the LiDAR frame (no calibration).
pub fn write_box_labels(path: &Path, boxes: &[Box3D], classes: &[String], with_score: bool) -> Result<()> {
    let objects = boxes
        .iter()
        .map(|b| {
            let name = classes.get(b.class_id).ok_or_else(|| {
                Error::Contract(format!("class id {} has no name among {classes:?}", b.class_id))
            })?;
            Ok(KittiObject::from_box(b, name, None, with_score))
        })
        .collect::<Result<Vec<_>>>()?;
    write_labels(path, &objects)
}

/// Generates `n` scenes into `dir`. Scene `i` uses seed `global_seed ^ i`.
/// With `n = 0` only the (empty) manifest is written.
pub fn write_synthetic_dataset(
    dir: &Path,
    spec: &SyntheticSceneSpec,
    n: usize,
    global_seed: u64,
    classes: &[String],
) -> Result<Vec<SceneSample>> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if n > 0 {
        for sub in ["velodyne", "label"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let mut manifest = String::new();
    let mut scenes = Vec::with_capacity(n);
    for i in 0..n {
        let seed = global_seed ^ i as u64;
        let mut sample = synth_generate(&SyntheticSceneSpec { seed, ..spec.clone() })?;
        sample.scene_id = format!("{i:06}");
        let (bin, label) = scene_paths(dir, &sample.scene_id);
        write_bin(&bin, &sample.cloud)?;
        write_box_labels(&label, &sample.gts, classes, false)?;
        manifest.push_str(&format!("{} {seed}\n", sample.scene_id));
        scenes.push(sample);
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(scenes)
}
