use super::{expect_dim, expect_rank};
use crate::error::Result;
use crate::tape::{accumulate, Op, Tape, Var};
use crate::tensor::{Element, Tensor};

impl<T: Element> Tape<T> {
    /// Fully-connected layer: `out[n, j] = Σ_i x[n, i] · weight[i, j] + bias[j]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        expect_rank(OP, &xs, 2)?;
        expect_rank(OP, &ws, 2)?;
        expect_rank(OP, &bs, 1)?;
        expect_dim(OP, 1, ws[0], xs[1])?;
        expect_dim(OP, 0, ws[1], bs[0])?;
        let (n, cin, cout) = (xs[0], xs[1], ws[1]);

        let bias_data = self.value(bias).data();
        let mut out = Vec::with_capacity(n * cout);
        for _ in 0..n {
            out.extend_from_slice(bias_data);
        }
        T::gemm(
            n,
            cin,
            cout,
            self.value(x).data(),
            false,
            self.value(weight).data(),
            false,
            &mut out,
            true,
        );
        let value = Tensor::new([n, cout], out)?;
        Ok(self.push(value, Op::Linear { x, w: weight, b: bias }))
    }
}

pub(crate) fn linear_backward<T: Element>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Var,
    gout: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let xv = tape.value(x);
    let wv = tape.value(w);
    let (n, cin) = (xv.shape()[0], xv.shape()[1]);
    let cout = wv.shape()[1];
    let g = gout.data();

    accumulate(tape, grads, x, |gx| {
        T::gemm(n, cout, cin, g, false, wv.data(), true, gx, true);
    });
    accumulate(tape, grads, w, |gw| {
        T::gemm(cin, n, cout, xv.data(), true, g, false, gw, true);
    });
    accumulate(tape, grads, b, |gb| {
        for row in g.chunks_exact(cout.max(1)) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc = *acc + *v;
            }
        }
    });
}
