//! Fused detection losses. Both reduce to a scalar and carry their targets
//! as constants on the tape.

use super::expect_dim;
use super::pointwise::sigmoid;
use crate::error::{Result, TensorError};
use crate::tape::{accumulate, Op, Tape, Var};
use crate::tensor::{Element, Tensor};

/// Sigmoid focal loss over a flat set of logits.
#[derive(Clone, Debug)]
pub struct FocalSpec<T> {
    /// Binary target per logit (0 or 1).
    pub targets: Vec<T>,
    /// Logits excluded from the loss (ignored anchors) are `false`.
    pub mask: Vec<bool>,
    pub alpha: T,
    pub gamma: T,
    /// The masked sum is divided by this (typically the positive count).
    pub normalizer: T,
}

/// Smooth-L1 over rows of width `width`, summed over columns and divided by
/// `normalizer`.
#[derive(Clone, Debug)]
pub struct SmoothL1Spec<T> {
    pub targets: Vec<T>,
    pub row_mask: Vec<bool>,
    pub width: usize,
    pub normalizer: T,
}

/// `log σ(x)` without overflow.
fn log_sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Focal term and its derivative with respect to the logit.
fn focal_term<T: Element>(x: T, target: T, alpha: T, gamma: T) -> (T, T) {
    let one = T::one();
    let positive = target > T::from_f64_lossy(0.5);
    let (p_t, log_p_t, alpha_t, sign) = if positive {
        (sigmoid(x), log_sigmoid(x), alpha, one)
    } else {
        (sigmoid(-x), log_sigmoid(-x), one - alpha, -one)
    };
    let q = one - p_t;
    let loss = -alpha_t * q.powf(gamma) * log_p_t;
    let dlogit = sign * alpha_t * (gamma * q.powf(gamma) * p_t * log_p_t - q.powf(gamma + one));
    (loss, dlogit)
}

fn smooth_l1_term<T: Element>(d: T) -> (T, T) {
    let half = T::from_f64_lossy(0.5);
    if d.abs() < T::one() {
        (half * d * d, d)
    } else {
        (d.abs() - half, d.signum())
    }
}

/// Elementwise smooth-L1 value, `0.5 x²` inside the unit band and
/// `|x| - 0.5` outside.
pub fn smooth_l1_value<T: Element>(x: T) -> T {
    smooth_l1_term(x).0
}

/// Elementwise sigmoid focal value for one logit.
pub fn focal_value<T: Element>(logit: T, target: T, alpha: T, gamma: T) -> T {
    focal_term(logit, target, alpha, gamma).0
}

impl<T: Element> Tape<T> {
    pub fn focal_loss(&mut self, logits: Var, spec: FocalSpec<T>) -> Result<Var> {
        let n = self.value(logits).numel();
        expect_dim("focal_loss", 0, n, spec.targets.len())?;
        expect_dim("focal_loss", 0, n, spec.mask.len())?;
        if spec.normalizer <= T::zero() {
            return Err(TensorError::Contract("focal normalizer must be positive".into()));
        }
        let total: T = self
            .value(logits)
            .data()
            .iter()
            .zip(&spec.targets)
            .zip(&spec.mask)
            .filter(|(_, &m)| m)
            .map(|((&x, &t), _)| focal_term(x, t, spec.alpha, spec.gamma).0)
            .sum();
        let value = Tensor::scalar(total / spec.normalizer);
        Ok(self.push(value, Op::FocalLoss { logits, spec }))
    }

    pub fn smooth_l1(&mut self, pred: Var, spec: SmoothL1Spec<T>) -> Result<Var> {
        let n = self.value(pred).numel();
        expect_dim("smooth_l1", 0, n, spec.targets.len())?;
        expect_dim("smooth_l1", 0, n, spec.row_mask.len() * spec.width)?;
        if spec.normalizer <= T::zero() {
            return Err(TensorError::Contract("smooth-l1 normalizer must be positive".into()));
        }
        let p = self.value(pred).data();
        let mut total = T::zero();
        for (row, &on) in spec.row_mask.iter().enumerate() {
            if !on {
                continue;
            }
            for j in row * spec.width..(row + 1) * spec.width {
                total = total + smooth_l1_term(p[j] - spec.targets[j]).0;
            }
        }
        let value = Tensor::scalar(total / spec.normalizer);
        Ok(self.push(value, Op::SmoothL1 { pred, spec }))
    }
}

pub(crate) fn focal_backward<T: Element>(
    tape: &Tape<T>,
    logits: Var,
    spec: &FocalSpec<T>,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let scale = gout.data()[0] / spec.normalizer;
    let xv = tape.value(logits).data();
    accumulate(tape, grads, logits, |gx| {
        for (i, d) in gx.iter_mut().enumerate() {
            if spec.mask[i] {
                let (_, dl) = focal_term(xv[i], spec.targets[i], spec.alpha, spec.gamma);
                *d = *d + scale * dl;
            }
        }
    });
}

pub(crate) fn smooth_l1_backward<T: Element>(
    tape: &Tape<T>,
    pred: Var,
    spec: &SmoothL1Spec<T>,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let scale = gout.data()[0] / spec.normalizer;
    let p = tape.value(pred).data();
    accumulate(tape, grads, pred, |gp| {
        for (row, &on) in spec.row_mask.iter().enumerate() {
            if !on {
                continue;
            }
            for j in row * spec.width..(row + 1) * spec.width {
                let (_, d) = smooth_l1_term(p[j] - spec.targets[j]);
                gp[j] = gp[j] + scale * d;
            }
        }
    });
}
