use super::expect_same_shape;
use crate::error::{Result, TensorError};
use crate::tape::{accumulate, Op, Tape, Var};
use crate::tensor::{Element, Tensor};

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Element> Tape<T> {
    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())
            .expect("shape preserved");
        self.push(value, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn mul_scalar(&mut self, x: Var, s: T) -> Var {
        self.map(x, |v| v * s, Op::MulScalar { x, s })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        expect_same_shape(name, self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: axis + 1,
                shape,
            });
        }
        let (outer, len, inner) = axis_view(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total = total + e;
                }
                for k in 0..len {
                    out[at(k)] = out[at(k)] / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { x, axis }))
    }
}

fn axis_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn add_into<T: Element>(dst: &mut [T], src: impl Iterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn relu_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let xv = tape.value(x).data();
    accumulate(tape, grads, x, |gx| {
        add_into(
            gx,
            xv.iter()
                .zip(gout.data())
                .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }),
        )
    });
}

pub(crate) fn sigmoid_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    out: &Tensor<T>,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    accumulate(tape, grads, x, |gx| {
        add_into(
            gx,
            out.data()
                .iter()
                .zip(gout.data())
                .map(|(&y, &g)| g * y * (T::one() - y)),
        )
    });
}

pub(crate) fn softmax_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    axis: usize,
    out: &Tensor<T>,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let (outer, len, inner) = axis_view(out.shape(), axis);
    let y = out.data();
    let g = gout.data();
    accumulate(tape, grads, x, |gx| {
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let dot: T = (0..len).map(|k| y[at(k)] * g[at(k)]).sum();
                for k in 0..len {
                    let j = at(k);
                    gx[j] = gx[j] + y[j] * (g[j] - dot);
                }
            }
        }
    });
}

pub(crate) fn add_backward<T: Element>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    accumulate(tape, grads, a, |ga| add_into(ga, gout.data().iter().copied()));
    accumulate(tape, grads, b, |gb| add_into(gb, gout.data().iter().copied()));
}

pub(crate) fn mul_backward<T: Element>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let av = tape.value(a).data();
    let bv = tape.value(b).data();
    accumulate(tape, grads, a, |ga| {
        add_into(ga, gout.data().iter().zip(bv).map(|(&g, &y)| g * y))
    });
    accumulate(tape, grads, b, |gb| {
        add_into(gb, gout.data().iter().zip(av).map(|(&g, &x)| g * x))
    });
}

pub(crate) fn mul_scalar_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    s: T,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    accumulate(tape, grads, x, |gx| {
        add_into(gx, gout.data().iter().map(|&g| g * s))
    });
}

pub(crate) fn sum_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let g = gout.data()[0];
    accumulate(tape, grads, x, |gx| {
        for d in gx.iter_mut() {
            *d = *d + g;
        }
    });
}
