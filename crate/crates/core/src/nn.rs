//! Parameterised layers. Each layer registers its weights in a
//! [`ParamStore`] under a dotted name and runs on a tape through a [`Bound`].

use cvf_tensor::params::kaiming_normal;
use cvf_tensor::{Bound, Element, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Everything needed to create parameters: the store and an RNG.
pub struct Init<'a, T, R: ?Sized> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Element, R: Rng + ?Sized> Init<'_, T, R> {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let value = kaiming_normal(shape, fan_in, self.rng);
        Ok(self.store.add(name, value)?)
    }

    fn bias(&mut self, name: String, len: usize, value: f64) -> Result<ParamId> {
        Ok(self.store.add(name, Tensor::full([len], T::from_f64_lossy(value)))?)
    }
}

/// Square-kernel 2-D convolution with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    kernel: ParamId,
    bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub size: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        size: usize,
        stride: usize,
    ) -> Result<Self> {
        if size % 2 == 0 || stride == 0 || cin == 0 || cout == 0 {
            return Err(Error::config(format!(
                "{name}: conv {cin}->{cout} with kernel {size}, stride {stride}"
            )));
        }
        Ok(Self {
            kernel: init.weight(format!("{name}.weight"), &[cout, cin, size, size], cin * size * size)?,
            bias: init.bias(format!("{name}.bias"), cout, 0.0)?,
            cin,
            cout,
            size,
            stride,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let (k, b) = (bound.var(self.kernel), bound.var(self.bias));
        Ok(tape.conv2d(x, k, b, self.stride, self.size / 2)?)
    }

    pub fn forward_relu<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(tape, bound, x)?;
        Ok(tape.relu(y))
    }
}

/// Fully-connected layer over rows of a `[N, cin]` matrix.
#[derive(Clone, Debug)]
pub struct Dense {
    weight: ParamId,
    bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Dense {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Self::with_bias(init, name, cin, cout, 0.0)
    }

    pub fn with_bias<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        bias: f64,
    ) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::config(format!("{name}: dense {cin}->{cout}")));
        }
        Ok(Self {
            weight: init.weight(format!("{name}.weight"), &[cin, cout], cin)?,
            bias: init.bias(format!("{name}.bias"), cout, bias)?,
            cin,
            cout,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        Ok(tape.linear(x, bound.var(self.weight), bound.var(self.bias))?)
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }
}

/// Stack of dense layers, each followed by ReLU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cin: usize,
        widths: &[usize],
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::config(format!("{name}: MLP needs at least one layer")));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut c = cin;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Dense::new(init, &format!("{name}.{i}"), c, w)?);
            c = w;
        }
        Ok(Self { layers })
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.cout)
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, bound, x)?;
            x = tape.relu(x);
        }
        Ok(x)
    }
}
