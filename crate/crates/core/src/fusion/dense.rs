use cvf_tensor::{Bound, Element, Tape, Var};
use rand::Rng;

use super::{RangeStreamConfig, RangeTap};
use crate::error::{Error, Result};
use crate::nn::{Conv, Init};

/// Densely connected convolution block.
///
/// With stride 2 the input first goes through a stride-2 3×3 convolution that
/// keeps its channel count. Each of the `layers` 3×3 conv + ReLU layers sees
/// the concatenation of the block input and every earlier layer output and
/// adds `growth` channels.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    down: Option<Conv>,
    layers: Vec<Conv>,
    pub cin: usize,
    pub cout: usize,
}

impl DenseBlock {
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cin: usize,
        layers: usize,
        growth: usize,
        stride: usize,
    ) -> Result<Self> {
        if layers == 0 || growth == 0 {
            return Err(Error::config(format!("{name}: denseblock needs layers ≥ 1 and growth ≥ 1")));
        }
        let down = match stride {
            1 => None,
            2 => Some(Conv::new(init, &format!("{name}.down"), cin, cin, 3, 2)?),
            s => return Err(Error::config(format!("{name}: unsupported stride {s}"))),
        };
        let layers = (0..layers)
            .map(|l| Conv::new(init, &format!("{name}.{l}"), cin + l * growth, growth, 3, 1))
            .collect::<Result<Vec<_>>>()?;
        let cout = cin + layers.len() * growth;
        Ok(Self { down, layers, cin, cout })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let mut x = x;
        if let Some(down) = &self.down {
            let s = tape.shape(x);
            if s[1] < 2 || s[2] < 2 {
                return Err(Error::config(format!(
                    "stride-2 denseblock on a {}x{} map underflows",
                    s[1], s[2]
                )));
            }
            x = down.forward_relu(tape, bound, x)?;
        }
        let mut parts = vec![x];
        for layer in &self.layers {
            let input = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? };
            parts.push(layer.forward_relu(tape, bound, input)?);
        }
        Ok(tape.concat(&parts, 0)?)
    }
}

/// One decoder step: upsample to the skip resolution, concatenate the skip,
/// run a stride-1 denseblock and a 1×1 transition to a fixed width.
#[derive(Clone, Debug)]
struct DecoderBlock {
    skip: usize,
    dense: DenseBlock,
    transition: Conv,
}

/// Encoder-decoder of denseblocks over a range image.
#[derive(Clone, Debug)]
pub struct RangeStream {
    stem: Conv,
    encoder: Vec<DenseBlock>,
    decoder: Vec<DecoderBlock>,
    /// Configured taps, with the fusion stage each one feeds.
    taps: Vec<(RangeTap, usize)>,
    /// Channel count of each tap before replacement.
    pub tap_channels: Vec<usize>,
    /// Downscale factor of each tap relative to the input.
    pub tap_scales: Vec<f64>,
    pub out_channels: usize,
}

impl RangeStreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_strides.is_empty() || self.encoder_strides.len() != self.encoder_layers_per_block.len() {
            return Err(Error::config(format!(
                "{} encoder strides for {} encoder layer counts",
                self.encoder_strides.len(),
                self.encoder_layers_per_block.len()
            )));
        }
        if self.encoder_strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::config("encoder strides must be 1 or 2"));
        }
        let downs = self.encoder_strides.iter().filter(|&&s| s == 2).count();
        if self.decoder_blocks != downs {
            return Err(Error::config(format!(
                "{} decoder blocks cannot undo {downs} stride-2 encoder blocks",
                self.decoder_blocks
            )));
        }
        if self.base_channels == 0 || self.growth == 0 || self.decoder_width == 0 || self.decoder_layers == 0 {
            return Err(Error::config("range stream widths and layer counts must be positive"));
        }
        Ok(())
    }

    /// Downscale factor after each encoder block.
    pub fn encoder_scales(&self) -> Vec<f64> {
        let mut s = 1.0;
        self.encoder_strides
            .iter()
            .map(|&st| {
                s /= st as f64;
                s
            })
            .collect()
    }

    /// Encoder block whose output is the skip for each decoder block: the last
    /// block at the decoder's target resolution.
    fn decoder_skips(&self) -> Vec<usize> {
        let scales = self.encoder_scales();
        let mut target = *scales.last().expect("validated non-empty");
        (0..self.decoder_blocks)
            .map(|_| {
                target *= 2.0;
                scales.iter().rposition(|&s| s == target).expect("validated stride schedule")
            })
            .collect()
    }
}

impl RangeStream {
    /// `taps[k]` is where fusion stage `k` attaches; `replaced[k]` is the
    /// channel count of the map that stage hands back.
    pub fn new<T: Element, R: Rng + ?Sized>(
        init: &mut Init<'_, T, R>,
        name: &str,
        cfg: &RangeStreamConfig,
        input_channels: usize,
        taps: &[RangeTap],
        replaced: &[usize],
    ) -> Result<Self> {
        cfg.validate()?;
        let mut seen = Vec::new();
        for &tap in taps {
            let ok = match tap {
                RangeTap::Encoder(i) => i < cfg.encoder_strides.len(),
                RangeTap::Decoder(i) => i < cfg.decoder_blocks,
            };
            if !ok {
                return Err(Error::config(format!("range tap {tap:?} is out of range")));
            }
            if seen.contains(&tap) {
                return Err(Error::config(format!("range tap {tap:?} is used twice")));
            }
            seen.push(tap);
        }
        let stage_of = |tap: RangeTap| taps.iter().position(|&t| t == tap);
        let mut tap_channels = vec![0; taps.len()];
        let mut tap_scales = vec![0.0; taps.len()];

        let stem = Conv::new(init, &format!("{name}.stem"), input_channels, cfg.base_channels, 3, 1)?;
        let scales = cfg.encoder_scales();
        let mut c = cfg.base_channels;
        let mut enc_channels = Vec::new();
        let mut encoder = Vec::new();
        for (i, (&stride, &layers)) in cfg.encoder_strides.iter().zip(&cfg.encoder_layers_per_block).enumerate() {
            let block = DenseBlock::new(init, &format!("{name}.enc{i}"), c, layers, cfg.growth, stride)?;
            c = block.cout;
            if let Some(k) = stage_of(RangeTap::Encoder(i)) {
                tap_channels[k] = c;
                tap_scales[k] = scales[i];
                c = replaced[k];
            }
            enc_channels.push(c);
            encoder.push(block);
        }
        let mut decoder = Vec::new();
        for (j, skip) in cfg.decoder_skips().into_iter().enumerate() {
            let dense = DenseBlock::new(
                init,
                &format!("{name}.dec{j}"),
                c + enc_channels[skip],
                cfg.decoder_layers,
                cfg.growth,
                1,
            )?;
            let transition = Conv::new(init, &format!("{name}.dec{j}.out"), dense.cout, cfg.decoder_width, 1, 1)?;
            c = cfg.decoder_width;
            if let Some(k) = stage_of(RangeTap::Decoder(j)) {
                tap_channels[k] = c;
                tap_scales[k] = scales[skip];
                c = replaced[k];
            }
            decoder.push(DecoderBlock { skip, dense, transition });
        }
        Ok(Self {
            stem,
            encoder,
            decoder,
            taps: taps.iter().enumerate().map(|(k, &t)| (t, k)).collect(),
            tap_channels,
            tap_scales,
            out_channels: c,
        })
    }

    /// Runs the stream; `fuse(tape, stage, map)` is called at every tap and
    /// its result replaces the tapped map.
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        input: Var,
        fuse: &mut dyn FnMut(&mut Tape<T>, usize, Var) -> Result<Var>,
    ) -> Result<Var> {
        let stage_of = |tap: RangeTap| self.taps.iter().find(|(t, _)| *t == tap).map(|&(_, k)| k);
        let mut x = self.stem.forward_relu(tape, bound, input)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (i, block) in self.encoder.iter().enumerate() {
            x = block.forward(tape, bound, x)?;
            if let Some(k) = stage_of(RangeTap::Encoder(i)) {
                x = fuse(tape, k, x)?;
            }
            skips.push(x);
        }
        for (j, block) in self.decoder.iter().enumerate() {
            let skip = skips[block.skip];
            let (h, w) = {
                let s = tape.shape(skip);
                (s[1], s[2])
            };
            let up = tape.bilinear_resize(x, h, w)?;
            let cat = tape.concat(&[up, skip], 0)?;
            let y = block.dense.forward(tape, bound, cat)?;
            x = block.transition.forward_relu(tape, bound, y)?;
            if let Some(k) = stage_of(RangeTap::Decoder(j)) {
                x = fuse(tape, k, x)?;
            }
        }
        Ok(x)
    }
}
