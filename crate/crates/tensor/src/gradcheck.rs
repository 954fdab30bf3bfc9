//! Central finite-difference gradient checking.
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the backward implementations it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::{FocalSpec, SmoothL1Spec};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` among
    /// entries that exceed the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl GradCheck {
    /// Compares analytic gradients of the scalar produced by `f` with central
    /// differences, for every element of every input.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();

        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
            let loss = f(&mut tape, &vars)?;
            Ok(tape.value(loss).data()[0])
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
            failures: Vec::new(),
        };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (i, grad) in analytic.iter().enumerate() {
            for j in 0..inputs[i].numel() {
                let orig = inputs[i].data()[j];
                work[i].data_mut()[j] = orig + self.step;
                let plus = eval(&work)?;
                work[i].data_mut()[j] = orig - self.step;
                let minus = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = grad.data()[j];
                let abs = (a - numeric).abs();
                report.max_abs_error = report.max_abs_error.max(abs);
                report.checked += 1;
                if abs <= self.abs_tol {
                    continue;
                }
                let rel = abs / a.abs().max(numeric.abs());
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel > self.rel_tol {
                    report.failures.push(format!(
                        "input {i}[{j}]: analytic {a:.9e} numeric {numeric:.9e} (rel {rel:.3e})"
                    ));
                }
            }
        }
        Ok(report)
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Contracts an arbitrary output with a fixed random tensor so every output
/// element contributes to the scalar.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = random(tape.shape(y), &mut rng);
    let w = tape.constant(weights);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Runs `check` on every differentiable op of the tape, with inputs kept off
/// the kinks of relu and smooth L1. Returns one named report per case.
pub fn op_suite(check: &GradCheck) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut run = |name: &str, inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>| -> Result<()> {
        out.push((name.to_string(), check.run(inputs, f)?));
        Ok(())
    };

    let lin = [random(&[4, 3], &mut rng), random(&[3, 5], &mut rng), random(&[5], &mut rng)];
    run("linear", &lin, &|t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, 9)
    })?;

    for (stride, padding, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5)] {
        let inputs = [random(&[2, 6, 5], &mut rng), random(&[3, 2, k, k], &mut rng), random(&[3], &mut rng)];
        run(&format!("conv2d k{k} s{stride} p{padding}"), &inputs, &|t, v| {
            let y = t.conv2d(v[0], v[1], v[2], stride, padding)?;
            project(t, y, 4)
        })?;
    }

    let img = [random(&[2, 3, 4], &mut rng)];
    run("bilinear_resize up", &img, &|t, v| {
        let y = t.bilinear_resize(v[0], 7, 5)?;
        project(t, y, 5)
    })?;
    run("bilinear_resize down", &img, &|t, v| {
        let y = t.bilinear_resize(v[0], 2, 2)?;
        project(t, y, 6)
    })?;
    let coords = [(0.3, 0.7), (2.9, 1.2), (-1.0, 4.0), (1.0, 1.0), (3.5, 0.25)];
    run("bilinear_sample", &img, &|t, v| {
        let y = t.bilinear_sample(v[0], &coords)?;
        project(t, y, 7)
    })?;

    let cat = [random(&[2, 3, 2], &mut rng), random(&[2, 1, 2], &mut rng)];
    run("concat", &cat, &|t, v| {
        let y = t.concat(&[v[0], v[1]], 1)?;
        project(t, y, 8)
    })?;

    let rows = [random(&[5, 3], &mut rng), random(&[4, 3], &mut rng)];
    let idx = [3usize, 0, 3, 1, 3];
    run("gather_rows", &rows[..1], &|t, v| {
        let y = t.gather_rows(v[0], &idx)?;
        project(t, y, 10)
    })?;
    run("scatter_rows", &rows[..1], &|t, v| {
        let y = t.scatter_rows(v[0], &idx, 4)?;
        project(t, y, 11)
    })?;
    run("scatter_add_rows", &rows[..1], &|t, v| {
        let y = t.scatter_add_rows(v[0], &idx, 4)?;
        project(t, y, 23)
    })?;
    run("scatter_rows_into", &rows, &|t, v| {
        let y = t.scatter_rows_into(v[1], v[0], &idx)?;
        project(t, y, 12)
    })?;

    let m = [random(&[3, 4], &mut rng)];
    run("reshape", &m, &|t, v| {
        let y = t.reshape(v[0], &[2, 6])?;
        project(t, y, 13)
    })?;
    run("transpose2d", &m, &|t, v| {
        let y = t.transpose2d(v[0])?;
        project(t, y, 14)
    })?;
    let row = [random(&[1, 4], &mut rng)];
    run("broadcast_rows", &row, &|t, v| {
        let y = t.broadcast_rows(v[0], 5)?;
        project(t, y, 15)
    })?;

    let away = [Tensor::from_fn([3, 4], |i| {
        let v: f64 = rng.random_range(0.1..1.0);
        if i % 2 == 0 { v } else { -v }
    })];
    run("relu", &away, &|t, v| {
        let y = t.relu(v[0]);
        project(t, y, 16)
    })?;
    let pair = [random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)];
    run("sigmoid", &pair[..1], &|t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y, 17)
    })?;
    for axis in 0..2 {
        run(&format!("softmax axis {axis}"), &pair[..1], &|t, v| {
            let y = t.softmax(v[0], axis)?;
            project(t, y, 18)
        })?;
    }
    run("add", &pair, &|t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 19)
    })?;
    run("mul", &pair, &|t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, 20)
    })?;
    run("mul_scalar", &pair[..1], &|t, v| {
        let y = t.mul_scalar(v[0], -2.5);
        project(t, y, 21)
    })?;
    run("sum", &pair[..1], &|t, v| {
        let s = t.sum(v[0]);
        Ok(t.mul_scalar(s, 3.0))
    })?;

    let logits = [Tensor::from_fn([12], |_| rng.random_range(-3.0..3.0))];
    let targets: Vec<f64> = (0..12).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    let mask: Vec<bool> = (0..12).map(|i| i % 5 != 3).collect();
    run("focal_loss", &logits, &|t, v| {
        t.focal_loss(
            v[0],
            FocalSpec {
                targets: targets.clone(),
                mask: mask.clone(),
                alpha: 0.25,
                gamma: 2.0,
                normalizer: 3.0,
            },
        )
    })?;
    let pred = [Tensor::from_fn([3, 7], |i| (i as f64 * 0.37).sin() * 2.0)];
    let target: Vec<f64> = (0..21).map(|i| (i as f64 * 0.11).cos() * 0.1).collect();
    run("smooth_l1", &pred, &|t, v| {
        t.smooth_l1(
            v[0],
            SmoothL1Spec {
                targets: target.clone(),
                row_mask: vec![true, false, true],
                width: 7,
                normalizer: 2.0,
            },
        )
    })?;

    let comp = [
        random(&[2, 8, 8], &mut rng),
        random(&[4, 2, 3, 3], &mut rng),
        random(&[4], &mut rng),
        random(&[4, 3], &mut rng),
        random(&[3], &mut rng),
    ];
    run("composite", &comp, &|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
        let y = t.sigmoid(y);
        let up = t.bilinear_resize(y, 8, 8)?;
        let rows = t.reshape(up, &[4, 64])?;
        let rows = t.transpose2d(rows)?;
        let picked = t.gather_rows(rows, &[0, 9, 9, 63, 17])?;
        let z = t.linear(picked, v[3], v[4])?;
        let z = t.softmax(z, 1)?;
        project(t, z, 22)
    })?;
    Ok(out)
}
