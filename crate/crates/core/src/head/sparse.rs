use cvf_tensor::{Bound, Element, Tape, Tensor, Var};
use rand::Rng;

use super::anchors::AnchorConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv, Dense, Init};

/// Regression residual width.
pub const BOX_CODE: usize = 7;

/// Prior probability the classification bias starts at.
const CLS_PRIOR: f64 = 0.01;

/// Shared 3×3 conv followed by per-cell cls / box / direction projections,
/// evaluated only at occupied BEV cells.
#[derive(Clone, Debug)]
pub struct SparseHead {
    shared: Conv,
    cls: Dense,
    reg: Dense,
    dir: Dense,
    pub anchors_per_cell: usize,
    pub num_classes: usize,
}

/// Head outputs still on the tape; rows follow `valid_cells`.
#[derive(Clone, Debug)]
pub struct HeadVars {
    pub valid_cells: Vec<usize>,
    /// `[V, A·K]`
    pub cls: Var,
    /// `[V, A·7]`
    pub reg: Var,
    /// `[V, A·2]`
    pub dir: Var,
}

/// Materialised head outputs.
#[derive(Clone, Debug)]
pub struct SparseHeadOutput<T> {
    pub valid_cells: Vec<usize>,
    /// `[V, A, K]`
    pub cls_logits: Tensor<T>,
    /// `[V, A, 7]`
    pub reg: Tensor<T>,
    /// `[V, A, 2]`
    pub dir_logits: Tensor<T>,
}

impl HeadVars {
    pub fn materialize<T: Element>(&self, tape: &Tape<T>, a: usize, k: usize) -> Result<SparseHeadOutput<T>> {
        let v = self.valid_cells.len();
        let take = |var: Var, width: usize| tape.value(var).clone().reshape([v, a, width]);
        Ok(SparseHeadOutput {
            valid_cells: self.valid_cells.clone(),
            cls_logits: take(self.cls, k)?,
            reg: take(self.reg, BOX_CODE)?,
            dir_logits: take(self.dir, 2)?,
        })
    }
}

impl SparseHead {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cin: usize,
        channels: usize,
        anchors: &AnchorConfig,
    ) -> Result<Self> {
        let a = anchors.anchors_per_cell();
        let k = anchors.num_classes();
        let prior = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln();
        Ok(Self {
            shared: Conv::new(init, &format!("{name}.shared"), cin, channels, 3, 1)?,
            cls: Dense::with_bias(init, &format!("{name}.cls"), channels, a * k, prior)?,
            reg: Dense::new(init, &format!("{name}.reg"), channels, a * BOX_CODE)?,
            dir: Dense::new(init, &format!("{name}.dir"), channels, a * 2)?,
            anchors_per_cell: a,
            num_classes: k,
        })
    }

    fn shared_rows<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, bev: Var) -> Result<(Var, usize, usize)> {
        let s = tape.shape(bev).to_vec();
        if s.len() != 3 {
            return Err(Error::Contract(format!("BEV map must be [C, H, W], got {s:?}")));
        }
        let y = self.shared.forward_relu(tape, bound, bev)?;
        Ok((y, s[1], s[2]))
    }

    /// Head over the cells whose `occupancy` is set (`[H', W']` row-major).
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        bev: Var,
        occupancy: &[bool],
    ) -> Result<HeadVars> {
        let (y, h, w) = self.shared_rows(tape, bound, bev)?;
        if occupancy.len() != h * w {
            return Err(Error::Contract(format!(
                "occupancy of {} cells for a {h}x{w} head map",
                occupancy.len()
            )));
        }
        let c = self.shared.cout;
        let rows = tape.reshape(y, &[c, h * w])?;
        let rows = tape.transpose2d(rows)?;
        let valid_cells: Vec<usize> = (0..h * w).filter(|&i| occupancy[i]).collect();
        let feats = tape.gather_rows(rows, &valid_cells)?;
        Ok(HeadVars {
            cls: self.cls.forward(tape, bound, feats)?,
            reg: self.reg.forward(tape, bound, feats)?,
            dir: self.dir.forward(tape, bound, feats)?,
            valid_cells,
        })
    }

    /// Every cell, with the branch projections run as 1×1 convolutions over
    /// the whole map.
    pub fn forward_dense<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, bev: Var) -> Result<HeadVars> {
        let (y, h, w) = self.shared_rows(tape, bound, bev)?;
        let mut branch = |d: &Dense| -> Result<Var> {
            let wt = tape.transpose2d(bound.var(d.weight_id()))?;
            let kernel = tape.reshape(wt, &[d.cout, d.cin, 1, 1])?;
            let map = tape.conv2d(y, kernel, bound.var(d.bias_id()), 1, 0)?;
            let rows = tape.reshape(map, &[d.cout, h * w])?;
            Ok(tape.transpose2d(rows)?)
        };
        Ok(HeadVars {
            cls: branch(&self.cls)?,
            reg: branch(&self.reg)?,
            dir: branch(&self.dir)?,
            valid_cells: (0..h * w).collect(),
        })
    }
}
