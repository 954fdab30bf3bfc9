use super::{expect_dim, expect_rank};
use crate::error::{Result, TensorError};
use crate::tape::{accumulate, Op, Tape, Var};
use crate::tensor::{numel, Element, Tensor};

/// Rows per block and block length when viewing a shape as
/// `[outer, shape[axis], inner]`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

/// For each output row of a scatter, the input row that writes it last.
pub fn scatter_winners(idx: &[usize], rows: usize) -> Result<Vec<Option<usize>>> {
    let mut winners = vec![None; rows];
    for (i, &r) in idx.iter().enumerate() {
        if r >= rows {
            return Err(TensorError::Index {
                op: "scatter_rows",
                index: r,
                bound: rows,
            });
        }
        winners[r] = Some(i);
    }
    Ok(winners)
}

impl<T: Element> Tape<T> {
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let Some(&first) = xs.first() else {
            return Err(TensorError::Contract("concat of an empty list".into()));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Rank {
                op: OP,
                expected: axis + 1,
                shape: base,
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            expect_rank(OP, s, base.len())?;
            for (ax, (&a, &b)) in base.iter().zip(s).enumerate() {
                if ax != axis {
                    expect_dim(OP, ax, a, b)?;
                }
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &x in xs {
                let block = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.value(x).data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Copies rows `idx` of a `[M, C]` tensor into `[N, C]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        const OP: &str = "gather_rows";
        let xs = self.shape(x).to_vec();
        expect_rank(OP, &xs, 2)?;
        let (m, c) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= m {
                return Err(TensorError::Index {
                    op: OP,
                    index: i,
                    bound: m,
                });
            }
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let value = Tensor::new([idx.len(), c], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Adds row `i` of `x: [N, C]` into row `idx[i]` of a zero `[rows, C]`
    /// output; the adjoint of [`Tape::gather_rows`].
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        const OP: &str = "scatter_add_rows";
        let xs = self.shape(x).to_vec();
        expect_rank(OP, &xs, 2)?;
        expect_dim(OP, 0, idx.len(), xs[0])?;
        let c = xs[1];
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); rows * c];
        for (src, &r) in xv.chunks_exact(c.max(1)).zip(idx) {
            if r >= rows {
                return Err(TensorError::Index {
                    op: OP,
                    index: r,
                    bound: rows,
                });
            }
            for (d, s) in out[r * c..(r + 1) * c].iter_mut().zip(src) {
                *d = *d + *s;
            }
        }
        let value = Tensor::new([rows, c], out)?;
        Ok(self.push(
            value,
            Op::ScatterAddRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Writes row `i` of `x: [N, C]` to row `idx[i]` of a zero `[rows, C]`
    /// output. On collisions the largest input position wins.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        self.scatter_impl(x, None, idx, rows)
    }

    /// Like [`Tape::scatter_rows`], but rows nobody writes keep the values of
    /// `base: [rows, C]` (and pass its gradient through).
    pub fn scatter_rows_into(&mut self, base: Var, x: Var, idx: &[usize]) -> Result<Var> {
        let bs = self.shape(base).to_vec();
        expect_rank("scatter_rows_into", &bs, 2)?;
        expect_dim("scatter_rows_into", 1, bs[1], self.shape(x).get(1).copied().unwrap_or(0))?;
        self.scatter_impl(x, Some(base), idx, bs[0])
    }

    fn scatter_impl(&mut self, x: Var, base: Option<Var>, idx: &[usize], rows: usize) -> Result<Var> {
        const OP: &str = "scatter_rows";
        let xs = self.shape(x).to_vec();
        expect_rank(OP, &xs, 2)?;
        expect_dim(OP, 0, idx.len(), xs[0])?;
        let c = xs[1];
        let winners = scatter_winners(idx, rows)?;
        let xv = self.value(x).data();
        let mut out = match base {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![T::zero(); rows * c],
        };
        for (r, w) in winners.iter().enumerate() {
            if let Some(i) = w {
                out[r * c..(r + 1) * c].copy_from_slice(&xv[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::new([rows, c], out)?;
        Ok(self.push(value, Op::ScatterRows { x, base, winners }))
    }

    /// Reinterprets the buffer with a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("transpose2d", &xs, 2)?;
        let (r, c) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let value = Tensor::new([c, r], out)?;
        Ok(self.push(value, Op::Transpose2d { x }))
    }

    /// Repeats a `[1, C]` row into `[rows, C]`.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("broadcast_rows", &xs, 2)?;
        expect_dim("broadcast_rows", 0, 1, xs[0])?;
        let row = self.value(x).data().to_vec();
        let mut out = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            out.extend_from_slice(&row);
        }
        let value = Tensor::new([rows, xs[1]], out)?;
        Ok(self.push(value, Op::BroadcastRows { x }))
    }
}

pub(crate) fn concat_backward<T: Element>(
    tape: &Tape<T>,
    xs: &[Var],
    axis: usize,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let (outer, inner) = split_axis(gout.shape(), axis);
    let total = gout.shape()[axis] * inner;
    let mut offset = 0;
    for &x in xs {
        let block = tape.shape(x)[axis] * inner;
        accumulate(tape, grads, x, |gx| {
            for o in 0..outer {
                let src = &gout.data()[o * total + offset..o * total + offset + block];
                for (d, s) in gx[o * block..(o + 1) * block].iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        });
        offset += block;
    }
}

pub(crate) fn gather_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    idx: &[usize],
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let c = tape.shape(x)[1];
    accumulate(tape, grads, x, |gx| {
        for (&i, grow) in idx.iter().zip(gout.data().chunks_exact(c.max(1))) {
            for (d, s) in gx[i * c..(i + 1) * c].iter_mut().zip(grow) {
                *d = *d + *s;
            }
        }
    });
}

pub(crate) fn scatter_add_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    idx: &[usize],
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let c = tape.shape(x)[1];
    let g = gout.data();
    accumulate(tape, grads, x, |gx| {
        for (i, &r) in idx.iter().enumerate() {
            for (d, s) in gx[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                *d = *d + *s;
            }
        }
    });
}

pub(crate) fn scatter_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    base: Option<Var>,
    winners: &[Option<usize>],
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let c = tape.shape(x)[1];
    let g = gout.data();
    accumulate(tape, grads, x, |gx| {
        for (r, w) in winners.iter().enumerate() {
            if let Some(i) = w {
                for (d, s) in gx[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                    *d = *d + *s;
                }
            }
        }
    });
    if let Some(b) = base {
        accumulate(tape, grads, b, |gb| {
            for (r, w) in winners.iter().enumerate() {
                if w.is_none() {
                    for (d, s) in gb[r * c..(r + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                        *d = *d + *s;
                    }
                }
            }
        });
    }
}

pub(crate) fn layout_backward<T: Element>(
    tape: &Tape<T>,
    op: &Op<T>,
    x: Var,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let g = gout.data();
    match op {
        Op::Reshape { .. } => accumulate(tape, grads, x, |gx| {
            for (d, s) in gx.iter_mut().zip(g) {
                *d = *d + *s;
            }
        }),
        Op::Transpose2d { .. } => {
            let (r, c) = (tape.shape(x)[0], tape.shape(x)[1]);
            accumulate(tape, grads, x, |gx| {
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = gx[i * c + j] + g[j * r + i];
                    }
                }
            });
        }
        Op::BroadcastRows { .. } => {
            let c = tape.shape(x)[1];
            accumulate(tape, grads, x, |gx| {
                for row in g.chunks_exact(c.max(1)) {
                    for (d, s) in gx.iter_mut().zip(row) {
                        *d = *d + *s;
                    }
                }
            });
        }
        _ => unreachable!("not a layout op"),
    }
}
