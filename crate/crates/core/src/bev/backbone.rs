use cvf_tensor::{Bound, Element, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv, Init};

/// Three stride-2 stages; stage `i` has `widths[i]` channels and
/// `extra_layers[i]` additional stride-1 3×3 convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub widths: Vec<usize>,
    pub extra_layers: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 128, 256],
            extra_layers: vec![3, 5, 5],
        }
    }
}

/// Multi-scale BEV backbone. Each stage's output is resized to `H/2 × W/2`
/// and the three are concatenated, giving `Σ widths` channels.
#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<Vec<Conv>>,
}

impl Backbone {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cin: usize,
        cfg: &BackboneConfig,
    ) -> Result<Self> {
        if cfg.widths.len() != 3 || cfg.extra_layers.len() != 3 {
            return Err(Error::config("backbone needs exactly three stages"));
        }
        let mut stages = Vec::new();
        let mut c = cin;
        for (s, (&width, &extra)) in cfg.widths.iter().zip(&cfg.extra_layers).enumerate() {
            let mut convs = vec![Conv::new(init, &format!("{name}.{s}.down"), c, width, 3, 2)?];
            for l in 0..extra {
                convs.push(Conv::new(init, &format!("{name}.{s}.{l}"), width, width, 3, 1)?);
            }
            stages.push(convs);
            c = width;
        }
        Ok(Self { stages })
    }

    pub fn out_channels(&self) -> usize {
        self.stages.iter().map(|s| s[0].cout).sum()
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] % 8 != 0 || shape[2] % 8 != 0 {
            return Err(Error::config(format!(
                "BEV map {shape:?} must be [C, H, W] with H and W divisible by 8"
            )));
        }
        let (ho, wo) = (shape[1] / 2, shape[2] / 2);
        let mut outputs = Vec::with_capacity(self.stages.len());
        let mut y = x;
        for stage in &self.stages {
            for conv in stage {
                y = conv.forward_relu(tape, bound, y)?;
            }
            let s = tape.shape(y);
            let up = if (s[1], s[2]) == (ho, wo) {
                y
            } else {
                tape.bilinear_resize(y, ho, wo)?
            };
            outputs.push(up);
        }
        Ok(tape.concat(&outputs, 0)?)
    }
}
