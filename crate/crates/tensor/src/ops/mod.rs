pub(crate) mod conv;
pub(crate) mod index;
pub(crate) mod linear;
pub(crate) mod loss;
pub(crate) mod pointwise;
pub(crate) mod resample;

pub use loss::{FocalSpec, SmoothL1Spec};

use crate::error::{Result, TensorError};
use crate::tape::{Op, Tape};
use crate::tensor::{Element, Tensor};

pub(crate) fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn expect_dim(op: &'static str, axis: usize, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(TensorError::Dimension {
            op,
            axis,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn expect_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    expect_rank(op, b, a.len())?;
    for (axis, (&x, &y)) in a.iter().zip(b).enumerate() {
        expect_dim(op, axis, x, y)?;
    }
    Ok(())
}

pub(crate) fn backward<T: Element>(
    tape: &Tape<T>,
    node: usize,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let out = &tape.nodes[node].value;
    match &tape.nodes[node].op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => linear::linear_backward(tape, *x, *w, *b, gout, grads),
        Op::Conv2d {
            x,
            k,
            b,
            stride,
            padding,
        } => conv::conv2d_backward(tape, *x, *k, *b, *stride, *padding, gout, grads),
        Op::BilinearResize { x } => resample::resize_backward(tape, *x, gout, grads),
        Op::BilinearSample { x, taps } => resample::sample_backward(tape, *x, taps, gout, grads),
        Op::Concat { xs, axis } => index::concat_backward(tape, xs, *axis, gout, grads),
        Op::GatherRows { x, idx } => index::gather_backward(tape, *x, idx, gout, grads),
        Op::ScatterAddRows { x, idx } => index::scatter_add_backward(tape, *x, idx, gout, grads),
        Op::ScatterRows { x, base, winners } => {
            index::scatter_backward(tape, *x, *base, winners, gout, grads)
        }
        Op::Reshape { x } | Op::BroadcastRows { x } | Op::Transpose2d { x } => {
            index::layout_backward(tape, &tape.nodes[node].op, *x, gout, grads)
        }
        Op::Relu { x } => pointwise::relu_backward(tape, *x, gout, grads),
        Op::Sigmoid { x } => pointwise::sigmoid_backward(tape, *x, out, gout, grads),
        Op::Softmax { x, axis } => pointwise::softmax_backward(tape, *x, *axis, out, gout, grads),
        Op::Add { a, b } => pointwise::add_backward(tape, *a, *b, gout, grads),
        Op::Mul { a, b } => pointwise::mul_backward(tape, *a, *b, gout, grads),
        Op::MulScalar { x, s } => pointwise::mul_scalar_backward(tape, *x, *s, gout, grads),
        Op::Sum { x } => pointwise::sum_backward(tape, *x, gout, grads),
        Op::FocalLoss { logits, spec } => loss::focal_backward(tape, *logits, spec, gout, grads),
        Op::SmoothL1 { pred, spec } => loss::smooth_l1_backward(tape, *pred, spec, gout, grads),
    }
    Ok(())
}
