use crate::params::ParamStore;
use crate::tensor::Element;

/// Adam over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// untouched; the caller zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        if self.first.is_empty() {
            for (_, p) in store.iter() {
                self.first.push(vec![T::zero(); p.value.numel()]);
                self.second.push(vec![T::zero(); p.value.numel()]);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = T::from_f64_lossy(lr * bc2.sqrt() / bc1);
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let eps = T::from_f64_lossy(self.eps * bc2.sqrt());
        for (((_, p), m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w = *w - step_size * *m / (v.sqrt() + eps);
            }
        }
    }
}

impl<T: Element> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

/// Warm-up from `peak / 10` to `peak`, then cosine decay to `floor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPhaseSchedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
}

impl TwoPhaseSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warm = (self.warmup_fraction.clamp(0.0, 1.0) * total).round();
        let s = step as f64;
        let start = self.peak / 10.0;
        if s < warm {
            let t = s / warm;
            start + (self.peak - start) * 0.5 * (1.0 - (std::f64::consts::PI * t).cos())
        } else {
            let span = (total - warm).max(1.0);
            let t = ((s - warm) / span).min(1.0);
            self.floor + (self.peak - self.floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}
