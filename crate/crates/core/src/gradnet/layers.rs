//! Parameterized layers and the convolutional encoder/decoder pair shared by
//! both tokenizers and the continuous baseline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Cursor over parameter handles bound on a tape, consumed in the same order
/// the owning module lists its parameters.
pub struct BoundParams<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl<'a> BoundParams<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        Self { vars, pos: 0 }
    }

    fn next(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }
}

/// Records `params` on the tape, trainable or frozen.
pub fn bind(tape: &mut Tape, params: &[&Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| if trainable { tape.param((*p).clone()) } else { tape.constant((*p).clone()) })
        .collect()
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv1dLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel_size) as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride: stride.max(1),
            padding,
            weight: uniform(&[out_channels, in_channels, kernel_size], bound, rng),
            bias: uniform(&[out_channels], bound, rng),
        }
    }

    pub fn out_len(&self, time: usize) -> usize {
        (time + 2 * self.padding).saturating_sub(self.kernel_size) / self.stride + 1
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape, p: &mut BoundParams, x: Var) -> Result<Var> {
        let (w, b) = (p.next(), p.next());
        tape.conv1d(x, w, b, self.stride, self.padding)
    }

    /// Applies the layer to a single `[channels, time]` sequence.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let (c, t) = x.dims2()?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} channels, got {c}",
                self.in_channels
            )));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone().reshape(vec![1, c, t])?);
        let vars = bind(&mut tape, &self.params(), false);
        let y = self.forward(&mut tape, &mut BoundParams::new(&vars), xv)?;
        let out = tape.value(y).clone();
        let (_, co, to) = out.dims3()?;
        out.reshape(vec![co, to])
    }
}

/// Channel-mixing affine layer applied independently at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            in_features,
            out_features,
            weight: uniform(&[out_features, in_features], bound, rng),
            bias: uniform(&[out_features], bound, rng),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape, p: &mut BoundParams, x: Var) -> Result<Var> {
        let (w, b) = (p.next(), p.next());
        tape.linear(x, w, b)
    }
}

/// Sizes of an encoder/decoder pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecDims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// `input → conv(k4,s2) → lrelu → conv(k4,s2) → lrelu → conv(k3) → lrelu → linear`.
/// Downsamples time by 4.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub dims: CodecDims,
    down1: Conv1dLayer,
    down2: Conv1dLayer,
    mix: Conv1dLayer,
    proj: Linear,
}

pub const DOWNSAMPLE: usize = 4;

impl ConvEncoder {
    pub fn new(dims: CodecDims, rng: &mut ChaCha8Rng) -> Self {
        Self {
            dims,
            down1: Conv1dLayer::new(dims.input, dims.hidden, 4, 2, 1, rng),
            down2: Conv1dLayer::new(dims.hidden, dims.hidden, 4, 2, 1, rng),
            mix: Conv1dLayer::new(dims.hidden, dims.hidden, 3, 1, 1, rng),
            proj: Linear::new(dims.hidden, dims.latent, rng),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        ["down1", "down2", "mix", "proj"]
            .iter()
            .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.down1.params();
        v.extend(self.down2.params());
        v.extend(self.mix.params());
        v.extend(self.proj.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.down1.params_mut();
        v.extend(self.down2.params_mut());
        v.extend(self.mix.params_mut());
        v.extend(self.proj.params_mut());
        v
    }

    /// `[B, input, T]` → `[B, latent, T/4]`.
    pub fn forward(&self, tape: &mut Tape, p: &mut BoundParams, x: Var) -> Result<Var> {
        let t = tape.shape(x).get(2).copied().unwrap_or(0);
        if t == 0 || t % DOWNSAMPLE != 0 {
            return Err(Error::ShapeMismatch(format!(
                "encoder input length {t} must be a positive multiple of {DOWNSAMPLE}"
            )));
        }
        let h = self.down1.forward(tape, p, x)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = self.down2.forward(tape, p, h)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = self.mix.forward(tape, p, h)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        self.proj.forward(tape, p, h)
    }
}

/// Time rate at which a [`ConvDecoder`] runs its convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderRate {
    /// Convolutions at the latent rate; the last layer emits control points
    /// of a cubic B-spline sampled back to the frame rate.
    Latent,
    /// Two linear ×2 upsamplings, each followed by a convolution, so every
    /// output frame is produced by frame-rate filters.
    Frame,
}

/// `linear → lrelu → conv(k3) → lrelu → conv(k3) → lrelu → conv(k3)` with
/// ×4 upsampling placed according to the [`DecoderRate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDecoder {
    pub dims: CodecDims,
    pub rate: DecoderRate,
    proj: Linear,
    conv1: Conv1dLayer,
    conv2: Conv1dLayer,
    out: Conv1dLayer,
}

impl ConvDecoder {
    /// `dims.input` is the decoder's output width.
    pub fn new(dims: CodecDims, rate: DecoderRate, rng: &mut ChaCha8Rng) -> Self {
        Self {
            dims,
            rate,
            proj: Linear::new(dims.latent, dims.hidden, rng),
            conv1: Conv1dLayer::new(dims.hidden, dims.hidden, 3, 1, 1, rng),
            conv2: Conv1dLayer::new(dims.hidden, dims.hidden, 3, 1, 1, rng),
            out: Conv1dLayer::new(dims.hidden, dims.input, 3, 1, 1, rng),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        ["proj", "conv1", "conv2", "out"]
            .iter()
            .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.proj.params();
        v.extend(self.conv1.params());
        v.extend(self.conv2.params());
        v.extend(self.out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.proj.params_mut();
        v.extend(self.conv1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.out.params_mut());
        v
    }

    /// `[B, latent, S]` → `[B, output, 4S]`.
    pub fn forward(&self, tape: &mut Tape, p: &mut BoundParams, z: Var) -> Result<Var> {
        let frame = self.rate == DecoderRate::Frame;
        let h = self.proj.forward(tape, p, z)?;
        let mut h = tape.leaky_relu(h, LEAKY_SLOPE);
        for conv in [&self.conv1, &self.conv2] {
            if frame {
                h = tape.upsample_linear(h, 2)?;
            }
            h = conv.forward(tape, p, h)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        let c = self.out.forward(tape, p, h)?;
        if frame {
            Ok(c)
        } else {
            tape.upsample_cubic(c, DOWNSAMPLE)
        }
    }
}
