use super::{expect_dim, expect_rank};
use crate::error::{Result, TensorError};
use crate::tape::{accumulate, Op, Tape, Var};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output extent of a strided, padded window; `None` when it would be < 1.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn im2col<T: Element>(x: &[T], g: &Geometry) -> Vec<T> {
    let mut cols = vec![T::zero(); g.patch() * g.pixels()];
    let pad = g.padding as isize;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * g.pixels()..(row + 1) * g.pixels()];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            *slot = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Element>(cols: &[T], g: &Geometry, gx: &mut [T]) {
    let pad = g.padding as isize;
    for ci in 0..g.c {
        let plane = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * g.pixels()..(row + 1) * g.pixels()];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            let d = &mut dst[ix as usize];
                            *d = *d + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tape<T> {
    /// 2-D cross-correlation of a `[C, H, W]` map with `[K, C, kh, kw]`
    /// kernels plus a per-kernel bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        let bs = self.shape(bias).to_vec();
        expect_rank(OP, &xs, 3)?;
        expect_rank(OP, &ks, 4)?;
        expect_rank(OP, &bs, 1)?;
        expect_dim(OP, 1, xs[0], ks[1])?;
        expect_dim(OP, 0, ks[0], bs[0])?;
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(TensorError::config(OP, format!("kernel {}x{} must be odd", ks[2], ks[3])));
        }
        let (ho, wo) = match (
            conv_output_size(xs[1], ks[2], stride, padding),
            conv_output_size(xs[2], ks[3], stride, padding),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(TensorError::config(
                    OP,
                    format!(
                        "input {}x{} with kernel {}x{}, stride {stride}, padding {padding} yields an empty output",
                        xs[1], xs[2], ks[2], ks[3]
                    ),
                ))
            }
        };
        let g = Geometry {
            c: xs[0],
            h: xs[1],
            w: xs[2],
            kh: ks[2],
            kw: ks[3],
            stride,
            padding,
            ho,
            wo,
        };
        let k = ks[0];
        let mut out = Vec::with_capacity(k * g.pixels());
        for &bk in self.value(bias).data() {
            out.extend(std::iter::repeat_n(bk, g.pixels()));
        }
        let xv = self.value(x).data();
        let kv = self.value(kernels).data();
        if g.is_pointwise() {
            T::gemm(k, g.patch(), g.pixels(), kv, false, xv, false, &mut out, true);
        } else {
            let cols = im2col(xv, &g);
            T::gemm(k, g.patch(), g.pixels(), kv, false, &cols, false, &mut out, true);
        }
        let value = Tensor::new([k, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                k: kernels,
                b: bias,
                stride,
                padding,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    kernels: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let xs = tape.shape(x);
    let ks = tape.shape(kernels);
    let (ho, wo) = (gout.shape()[1], gout.shape()[2]);
    let g = Geometry {
        c: xs[0],
        h: xs[1],
        w: xs[2],
        kh: ks[2],
        kw: ks[3],
        stride,
        padding,
        ho,
        wo,
    };
    let k = ks[0];
    let go = gout.data();
    let xv = tape.value(x).data();
    let kv = tape.value(kernels).data();

    accumulate(tape, grads, bias, |gb| {
        for (acc, plane) in gb.iter_mut().zip(go.chunks_exact(g.pixels().max(1))) {
            *acc = *acc + plane.iter().copied().sum();
        }
    });
    if tape.requires_grad(kernels) {
        let cols_owned;
        let cols: &[T] = if g.is_pointwise() {
            xv
        } else {
            cols_owned = im2col(xv, &g);
            &cols_owned
        };
        accumulate(tape, grads, kernels, |gk| {
            T::gemm(k, g.pixels(), g.patch(), go, false, cols, true, gk, true);
        });
    }
    if tape.requires_grad(x) {
        if g.is_pointwise() {
            accumulate(tape, grads, x, |gx| {
                T::gemm(g.patch(), k, g.pixels(), kv, true, go, false, gx, true);
            });
        } else {
            let mut gcols = vec![T::zero(); g.patch() * g.pixels()];
            T::gemm(g.patch(), k, g.pixels(), kv, true, go, false, &mut gcols, false);
            accumulate(tape, grads, x, |gx| col2im(&gcols, &g, gx));
        }
    }
}
