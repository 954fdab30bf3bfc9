//! Align-corners bilinear interpolation with border clamping.

use super::expect_rank;
use crate::error::{Result, TensorError};
use crate::tape::{accumulate, Op, Tape, Var};
use crate::tensor::{Element, Tensor};

/// Four flat spatial indices, their blend weights and the fractional
/// offsets for one sample.
#[derive(Clone, Debug)]
pub(crate) struct Taps<T> {
    idx: [usize; 4],
    wt: [T; 4],
    fx: T,
    fy: T,
}

/// Lower index, upper index and fractional offset along one axis.
fn axis_taps<T: Element>(coord: T, size: usize) -> (usize, usize, T) {
    let max = T::from_usize(size - 1).unwrap();
    let c = coord.max(T::zero()).min(max);
    let lo = c.floor();
    let i0 = lo.to_usize().unwrap_or(0).min(size - 1);
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, c - lo)
}

fn taps_at<T: Element>(u: T, v: T, h: usize, w: usize) -> Taps<T> {
    let (x0, x1, fx) = axis_taps(u, w);
    let (y0, y1, fy) = axis_taps(v, h);
    let one = T::one();
    Taps {
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        wt: [
            (one - fx) * (one - fy),
            fx * (one - fy),
            (one - fx) * fy,
            fx * fy,
        ],
        fx,
        fy,
    }
}

/// Blends the four taps as nested lerps so constant inputs reproduce exactly.
#[inline]
fn blend<T: Element>(plane: &[T], t: &Taps<T>) -> T {
    let [a, b, c, d] = t.idx.map(|i| plane[i]);
    let top = a + t.fx * (b - a);
    let bot = c + t.fx * (d - c);
    top + t.fy * (bot - top)
}

fn source_coord<T: Element>(dst: usize, dst_size: usize, src_size: usize) -> T {
    if dst_size <= 1 {
        return T::zero();
    }
    let num = T::from_usize(dst * (src_size - 1)).unwrap();
    num / T::from_usize(dst_size - 1).unwrap()
}

fn resize_taps<T: Element>(h: usize, w: usize, th: usize, tw: usize) -> Vec<Taps<T>> {
    let mut out = Vec::with_capacity(th * tw);
    for oy in 0..th {
        let sy: T = source_coord(oy, th, h);
        for ox in 0..tw {
            let sx: T = source_coord(ox, tw, w);
            out.push(taps_at(sx, sy, h, w));
        }
    }
    out
}

impl<T: Element> Tape<T> {
    /// Resizes a `[C, H, W]` map to `[C, target_h, target_w]`.
    pub fn bilinear_resize(&mut self, x: Var, target_h: usize, target_w: usize) -> Result<Var> {
        const OP: &str = "bilinear_resize";
        let xs = self.shape(x).to_vec();
        expect_rank(OP, &xs, 3)?;
        if target_h == 0 || target_w == 0 || xs[1] == 0 || xs[2] == 0 {
            return Err(TensorError::config(OP, "sizes must be at least 1"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let taps = resize_taps::<T>(h, w, target_h, target_w);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * target_h * target_w);
        for plane in xv.chunks_exact(h * w) {
            out.extend(taps.iter().map(|t| blend(plane, t)));
        }
        let value = Tensor::new([c, target_h, target_w], out)?;
        Ok(self.push(value, Op::BilinearResize { x }))
    }

    /// Samples a `[C, H, W]` map at continuous `(u, v)` = (column, row)
    /// positions, producing `[N, C]`. Positions are clamped into the map;
    /// the coordinates themselves are constants.
    pub fn bilinear_sample(&mut self, x: Var, coords: &[(T, T)]) -> Result<Var> {
        const OP: &str = "bilinear_sample";
        let xs = self.shape(x).to_vec();
        expect_rank(OP, &xs, 3)?;
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if h == 0 || w == 0 {
            return Err(TensorError::config(OP, "cannot sample an empty map"));
        }
        let taps: Vec<Taps<T>> = coords.iter().map(|&(u, v)| taps_at(u, v, h, w)).collect();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(coords.len() * c);
        for t in &taps {
            for plane in xv.chunks_exact(h * w) {
                out.push(blend(plane, t));
            }
        }
        let value = Tensor::new([coords.len(), c], out)?;
        Ok(self.push(value, Op::BilinearSample { x, taps }))
    }
}

pub(crate) fn resize_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let xs = tape.shape(x);
    let (h, w) = (xs[1], xs[2]);
    let (th, tw) = (gout.shape()[1], gout.shape()[2]);
    let taps = resize_taps::<T>(h, w, th, tw);
    accumulate(tape, grads, x, |gx| {
        for (gplane, oplane) in gx.chunks_exact_mut(h * w).zip(gout.data().chunks_exact(th * tw)) {
            for (t, &g) in taps.iter().zip(oplane) {
                for (&idx, &wt) in t.idx.iter().zip(&t.wt) {
                    gplane[idx] = gplane[idx] + wt * g;
                }
            }
        }
    });
}

pub(crate) fn sample_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    taps: &[Taps<T>],
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let xs = tape.shape(x);
    let (c, hw) = (xs[0], xs[1] * xs[2]);
    accumulate(tape, grads, x, |gx| {
        for (t, grow) in taps.iter().zip(gout.data().chunks_exact(c.max(1))) {
            for (ci, &g) in grow.iter().enumerate() {
                let plane = &mut gx[ci * hw..(ci + 1) * hw];
                for (&idx, &wt) in t.idx.iter().zip(&t.wt) {
                    plane[idx] = plane[idx] + wt * g;
                }
            }
        }
    });
}
