use cvf_tensor::{Element, FocalSpec, SmoothL1Spec, Tape, Var};
use serde::{Deserialize, Serialize};

use super::anchors::{assign_targets, AnchorConfig, Assignment};
use super::boxes::{encode_box, Box3D};
use super::sparse::{HeadVars, BOX_CODE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Regression weight.
    pub alpha: f64,
    /// Direction weight.
    pub beta: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.2,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.focal_alpha, self.focal_gamma]
            .iter()
            .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::config("loss weights and focal parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
    pub total: f64,
}

/// `cls + α·reg + β·dir`. A NaN component means training has diverged.
pub fn loss_total(cls: f64, reg: f64, dir: f64, cfg: &LossConfig) -> Result<LossBreakdown> {
    for (name, v) in [("cls", cls), ("reg", reg), ("dir", dir)] {
        if v.is_nan() {
            return Err(Error::Divergence(format!("{name} loss is NaN")));
        }
    }
    Ok(LossBreakdown {
        cls,
        reg,
        dir,
        total: cls + cfg.alpha * reg + cfg.beta * dir,
    })
}

/// Per-anchor training targets for one scene, anchors ordered as the head's
/// `[V, A]` rows.
#[derive(Clone, Debug)]
pub struct HeadTargets {
    /// `[V·A·K]` one-hot class targets.
    pub cls: Vec<f64>,
    /// False for every logit of an ignored anchor.
    pub cls_mask: Vec<bool>,
    /// `[V·A·7]` encoded residuals (zero for non-positives).
    pub reg: Vec<f64>,
    /// `[V·A]`
    pub positive: Vec<bool>,
    /// `[V·A·2]` one-hot direction bit.
    pub dir: Vec<f64>,
    pub num_positive: usize,
}

pub fn build_targets(anchors: &[Box3D], gts: &[Box3D], cfg: &AnchorConfig) -> Result<HeadTargets> {
    let k = cfg.num_classes();
    let n = anchors.len();
    let assignment = assign_targets(anchors, gts, cfg);
    let mut t = HeadTargets {
        cls: vec![0.0; n * k],
        cls_mask: vec![true; n * k],
        reg: vec![0.0; n * BOX_CODE],
        positive: vec![false; n],
        dir: vec![0.0; n * 2],
        num_positive: 0,
    };
    for (a, asg) in assignment.into_iter().enumerate() {
        match asg {
            Assignment::Negative => {}
            Assignment::Ignored => t.cls_mask[a * k..(a + 1) * k].fill(false),
            Assignment::Positive(g) => {
                let gt = &gts[g];
                t.cls[a * k + gt.class_id] = 1.0;
                let (r, backwards) = encode_box(gt, &anchors[a])?;
                t.reg[a * BOX_CODE..(a + 1) * BOX_CODE].copy_from_slice(&r);
                t.dir[a * 2 + usize::from(backwards)] = 1.0;
                t.positive[a] = true;
                t.num_positive += 1;
            }
        }
    }
    Ok(t)
}

/// Loss terms on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub cls: Var,
    pub reg: Var,
    pub dir: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Element>(&self, tape: &Tape<T>, cfg: &LossConfig) -> Result<LossBreakdown> {
        let get = |v: Var| tape.value(v).data()[0].to_f64_lossy();
        loss_total(get(self.cls), get(self.reg), get(self.dir), cfg)
    }
}

/// Focal classification, smooth-L1 regression and focal direction losses,
/// each normalised by the positive count (at least one).
pub fn head_loss<T: Element>(
    tape: &mut Tape<T>,
    out: &HeadVars,
    targets: &HeadTargets,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let rows = targets.positive.len();
    let norm = T::from_f64_lossy(targets.num_positive.max(1) as f64);
    let conv = |v: &[f64]| v.iter().map(|&x| T::from_f64_lossy(x)).collect::<Vec<T>>();
    let (fa, fg) = (T::from_f64_lossy(cfg.focal_alpha), T::from_f64_lossy(cfg.focal_gamma));

    let cls_flat = tape.reshape(out.cls, &[targets.cls.len()])?;
    let cls = tape.focal_loss(
        cls_flat,
        FocalSpec {
            targets: conv(&targets.cls),
            mask: targets.cls_mask.clone(),
            alpha: fa,
            gamma: fg,
            normalizer: norm,
        },
    )?;
    let reg_rows = tape.reshape(out.reg, &[rows, BOX_CODE])?;
    let reg = tape.smooth_l1(
        reg_rows,
        SmoothL1Spec {
            targets: conv(&targets.reg),
            row_mask: targets.positive.clone(),
            width: BOX_CODE,
            normalizer: norm,
        },
    )?;
    let dir_flat = tape.reshape(out.dir, &[rows * 2])?;
    let dir = tape.focal_loss(
        dir_flat,
        FocalSpec {
            targets: conv(&targets.dir),
            mask: targets.positive.iter().flat_map(|&p| [p, p]).collect(),
            alpha: fa,
            gamma: fg,
            normalizer: norm,
        },
    )?;
    let reg_w = tape.mul_scalar(reg, T::from_f64_lossy(cfg.alpha));
    let dir_w = tape.mul_scalar(dir, T::from_f64_lossy(cfg.beta));
    let total = tape.add(cls, reg_w)?;
    let total = tape.add(total, dir_w)?;
    if tape.value(total).data()[0].is_nan() {
        let vars = LossVars { cls, reg, dir, total };
        vars.breakdown(tape, cfg)?;
        return Err(Error::Divergence("total loss is NaN".into()));
    }
    Ok(LossVars { cls, reg, dir, total })
}
