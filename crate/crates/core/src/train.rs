//! Mini-batch Adam training with a warm-up / cosine learning-rate schedule.

use std::path::Path;

use cvf_tensor::checkpoint::{load_checkpoint, save_checkpoint};
use cvf_tensor::optim::{Adam, TwoPhaseSchedule};
use cvf_tensor::{Element, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::{augment, build_bank, gt_sample_injection, BankObject, SceneSample};
use crate::error::{Error, Result};
use crate::head::{build_targets, head_loss, HeadTargets, LossBreakdown};
use crate::model::CvfNet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's scenes.
    pub loss: LossBreakdown,
    pub lr: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} total={:.6} cls={:.6} reg={:.6} dir={:.6} lr={:.3e}",
            self.epoch, self.loss.total, self.loss.cls, self.loss.reg, self.loss.dir, self.lr
        )
    }
}

/// Seed for scene `ordinal`'s augmentation in `epoch`.
fn scene_seed(global: u64, epoch: usize, ordinal: usize) -> u64 {
    global ^ (ordinal as u64) ^ ((epoch as u64) << 32)
}

pub struct Trainer<'a, T> {
    pub model: &'a mut CvfNet<T>,
    cfg: &'a ExperimentConfig,
    adam: Adam<T>,
    schedule: TwoPhaseSchedule,
    bank: Vec<BankObject>,
    /// Targets for unaugmented scenes, built on first use.
    cache: Vec<Option<HeadTargets>>,
    step: u64,
}

impl<'a, T: Element> Trainer<'a, T> {
    pub fn new(model: &'a mut CvfNet<T>, cfg: &'a ExperimentConfig, scenes: &[SceneSample]) -> Self {
        let t = &cfg.train;
        let steps_per_epoch = scenes.len().div_ceil(t.batch_size).max(1);
        let bank = if t.augment && cfg.augment.gt_sample_max_per_class > 0 {
            build_bank(scenes)
        } else {
            Vec::new()
        };
        Self {
            model,
            cfg,
            adam: Adam::default(),
            schedule: TwoPhaseSchedule {
                peak: t.lr_peak,
                floor: t.lr_floor,
                warmup_fraction: t.warmup_fraction,
                total_steps: (steps_per_epoch * t.epochs) as u64,
            },
            bank,
            cache: vec![None; scenes.len()],
            step: 0,
        }
    }

    /// Loss of one scene; accumulates its gradients into the store.
    fn scene_step(&mut self, scene: &SceneSample, ordinal: usize, epoch: usize) -> Result<Option<LossBreakdown>> {
        let augmented;
        let sample = if self.cfg.train.augment {
            let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(self.cfg.train.seed, epoch, ordinal));
            let s = gt_sample_injection(scene.clone(), &self.bank, &self.cfg.augment, &mut rng);
            augmented = augment(s, &self.cfg.augment, &mut rng);
            &augmented
        } else {
            scene
        };
        let mut tape = Tape::new();
        let bound = self.model.store.bind(&mut tape);
        let fwd = match self.model.forward(&mut tape, &bound, &sample.cloud) {
            Ok(f) => f,
            Err(Error::EmptyImage) => return Ok(None),
            Err(e) => return Err(e),
        };
        let gts = sample.gts_in_range(&self.model.config.voxel);
        let fresh;
        let targets = match (&self.cache[ordinal], self.cfg.train.augment) {
            (Some(t), false) => t,
            _ => {
                fresh = build_targets(&fwd.anchors, &gts, &self.model.config.anchors)?;
                &fresh
            }
        };
        let loss = head_loss(&mut tape, &fwd.head, targets, &self.cfg.loss)?;
        let breakdown = loss.breakdown(&tape, &self.cfg.loss)?;
        tape.backward(loss.total)?;
        self.model.store.accumulate_grads(&tape, &bound);
        if !self.cfg.train.augment && self.cache[ordinal].is_none() {
            self.cache[ordinal] = Some(targets.clone());
        }
        Ok(Some(breakdown))
    }

    fn clip_gradients(&mut self) {
        let limit = self.cfg.train.grad_clip;
        if limit <= 0.0 {
            return;
        }
        let norm = self
            .model
            .store
            .iter()
            .flat_map(|(_, p)| p.grad.data().iter().map(|g| g.to_f64_lossy().powi(2)))
            .sum::<f64>()
            .sqrt();
        if norm > limit {
            self.model.store.scale_grads(T::from_f64_lossy(limit / norm));
        }
    }

    /// One pass over `scenes` in a seeded shuffled order.
    pub fn epoch(&mut self, scenes: &[SceneSample], epoch: usize) -> Result<EpochLog> {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.train.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9)));
        let mut sum = LossBreakdown::default();
        let mut counted = 0usize;
        let mut lr = self.schedule.lr(self.step);
        for batch in order.chunks(self.cfg.train.batch_size) {
            self.model.store.zero_grads();
            let mut in_batch = 0usize;
            for &i in batch {
                if let Some(b) = self.scene_step(&scenes[i], i, epoch)? {
                    sum.cls += b.cls;
                    sum.reg += b.reg;
                    sum.dir += b.dir;
                    sum.total += b.total;
                    in_batch += 1;
                }
            }
            if in_batch == 0 {
                continue;
            }
            counted += in_batch;
            self.model.store.scale_grads(T::from_f64_lossy(1.0 / in_batch as f64));
            self.clip_gradients();
            lr = self.schedule.lr(self.step);
            self.adam.step(&mut self.model.store, lr);
            self.step += 1;
        }
        let n = counted.max(1) as f64;
        Ok(EpochLog {
            epoch,
            loss: LossBreakdown {
                cls: sum.cls / n,
                reg: sum.reg / n,
                dir: sum.dir / n,
                total: sum.total / n,
            },
            lr,
        })
    }
}

/// Trains for the configured number of epochs, reporting each epoch.
pub fn train<T: Element>(
    model: &mut CvfNet<T>,
    scenes: &[SceneSample],
    cfg: &ExperimentConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if scenes.is_empty() {
        return Err(Error::config("training needs at least one scene"));
    }
    let mut trainer = Trainer::new(model, cfg, scenes);
    let mut logs = Vec::with_capacity(cfg.train.epochs);
    for epoch in 1..=cfg.train.epochs {
        let log = trainer.epoch(scenes, epoch)?;
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Saves parameters in the checkpoint format (single precision).
pub fn save_weights<T: Element>(model: &CvfNet<T>, path: &Path) -> Result<()> {
    Ok(save_checkpoint(&model.store, path)?)
}

/// Loads parameters saved by [`save_weights`]; names and shapes must match.
pub fn load_weights<T: Element>(model: &mut CvfNet<T>, path: &Path) -> Result<()> {
    let named = load_checkpoint(path)?;
    Ok(model.store.load_named(&named)?)
}
