use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::data::{imu_chunks, motion_from_channels};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::gradnet::{bind, AdamW, BoundParams, CodecDims, ConvDecoder, ConvEncoder, DecoderRate, Tape, Tensor, Var};
use crate::imusim::{InertiaSequence, NormStats, INERTIA_DIM};
use crate::motion::{layout, MotionSequence, MOTION_DIM};
use crate::vqcodec::{gather, quantize, Codebook};

const INIT_STREAM: u64 = 2;

pub(crate) fn init_rng(cfg: &TrainConfig, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((INIT_STREAM << 8) | purpose);
    rng
}

/// Decoder output head: raw motion channels, sigmoid contact probabilities.
pub(crate) fn output_head(tape: &mut Tape, y: Var) -> Result<Var> {
    let raw = tape.slice_channels(y, 0, layout::P)?;
    let logits = tape.slice_channels(y, layout::P, 4)?;
    let p = tape.sigmoid(logits);
    tape.concat_channels(&[raw, p])
}

fn hash_tensors<'a>(h: &mut Sha256, ts: impl IntoIterator<Item = &'a Tensor>) {
    for t in ts {
        h.update((t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
}

fn hash_codebook(h: &mut Sha256, cb: &Codebook) {
    h.update(cb.digest());
    for v in cb.sigma().iter().chain(cb.delta()) {
        h.update(v.to_le_bytes());
    }
    for d in cb.dead_counters() {
        h.update(d.to_le_bytes());
    }
}

/// Runs the decoder and output head on latents `[B, d, S]`.
fn decode_latents(decoder: &ConvDecoder, z: Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let vars = bind(&mut tape, &decoder.params(), false);
    let y = decoder.forward(&mut tape, &mut BoundParams::new(&vars), zv)?;
    let out = output_head(&mut tape, y)?;
    Ok(tape.value(out).clone())
}

/// Code rows `[S, d]` of one sequence to decoded motion of `4S` frames.
fn decode_rows(decoder: &ConvDecoder, rows: &Tensor, fps: f64) -> Result<MotionSequence> {
    let (s, d) = rows.dims2()?;
    if s == 0 {
        return Ok(MotionSequence { fps, frames: Vec::new() });
    }
    let mut tape = Tape::new();
    let r = tape.constant(rows.clone());
    let z = tape.from_rows(r, 1)?;
    debug_assert_eq!(tape.shape(z), &[1, d, s]);
    let y = decode_latents(decoder, tape.value(z).clone())?;
    motion_from_channels(y.data(), fps)
}

/// Runs an encoder on `[B, C, T]` and returns latent rows `[B·T/4, d]`.
fn encode_rows(encoder: &ConvEncoder, x: Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let vars = bind(&mut tape, &encoder.params(), false);
    let z = encoder.forward(&mut tape, &mut BoundParams::new(&vars), xv)?;
    let r = tape.to_rows(z)?;
    Ok(tape.value(r).clone())
}

/// IMU frames in whole chunks, `[chunks, 72, chunk_len]`; trailing frames
/// that do not fill a chunk are ignored.
fn chunk_tensor(seq: &InertiaSequence, chunk_len: usize) -> Result<Tensor> {
    let n = seq.len() / chunk_len;
    let data = imu_chunks(seq, 0, n * chunk_len, chunk_len)?;
    Tensor::new(vec![n, INERTIA_DIM, chunk_len], data)
}

/// Stage-one model: motion encoder, codebook and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTokenizer {
    pub config: TrainConfig,
    pub encoder: ConvEncoder,
    pub decoder: ConvDecoder,
    pub codebook: Codebook,
    pub optimizer: AdamW,
}

impl MotionTokenizer {
    /// Freshly initialized model; the codebook holds standard-normal entries.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_rng(cfg, 0);
        let dims = CodecDims { input: MOTION_DIM, hidden: cfg.hidden, latent: cfg.d_z };
        let encoder = ConvEncoder::new(dims, &mut rng);
        let decoder = ConvDecoder::new(dims, DecoderRate::Latent, &mut rng);
        let codebook = Codebook::new(cfg.k, cfg.d_z, cfg.gamma, &mut rng)?;
        let mut m = Self { config: cfg.clone(), encoder, decoder, codebook, optimizer: AdamW::new(&[], 0.0) };
        m.optimizer = AdamW::new(&m.params(), cfg.weight_decay);
        Ok(m)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.encoder.param_names().into_iter().map(|n| format!("encoder.{n}")).collect();
        v.extend(self.decoder.param_names().into_iter().map(|n| format!("decoder.{n}")));
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    /// SHA-256 over every parameter and the codebook state.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        hash_tensors(&mut h, self.params());
        hash_codebook(&mut h, &self.codebook);
        h.finalize().into()
    }

    /// Latent rows `[B·T/4, d]` of channel-major windows `[B, 271, T]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        encode_rows(&self.encoder, x.clone())
    }

    /// Motion tokens of a single channel-major window `[271, T]`.
    pub fn tokenize_window(&self, window: &[f64]) -> Result<Vec<usize>> {
        let t = window.len() / MOTION_DIM;
        let x = Tensor::new(vec![1, MOTION_DIM, t], window.to_vec())?;
        Ok(quantize(&self.encode(&x)?, &self.codebook)?.0)
    }

    /// Decodes motion tokens to `l` frames per token.
    pub fn decode_tokens(&self, tokens: &[usize]) -> Result<MotionSequence> {
        decode_rows(&self.decoder, &gather(&self.codebook, tokens)?, self.config.fps)
    }

    /// Decodes arbitrary code rows `[S, d]` with the motion decoder.
    pub fn decode_codes(&self, rows: &Tensor) -> Result<MotionSequence> {
        decode_rows(&self.decoder, rows, self.config.fps)
    }

    /// Encode, quantize and decode one channel-major window.
    pub fn reconstruct_window(&self, window: &[f64]) -> Result<MotionSequence> {
        self.decode_tokens(&self.tokenize_window(window)?)
    }
}

/// Stage-two model: IMU encoder and codebook, with the frozen motion model
/// whose decoder turns IMU tokens into motion.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuTokenizer {
    pub config: TrainConfig,
    pub encoder: ConvEncoder,
    pub codebook: Codebook,
    pub optimizer: AdamW,
    pub motion: MotionTokenizer,
    pub norm: NormStats,
}

impl ImuTokenizer {
    /// Randomly initialized encoder; the codebook starts as a copy of the
    /// motion codebook entries with fresh accumulators.
    pub fn new(cfg: &TrainConfig, motion: MotionTokenizer, norm: NormStats) -> Result<Self> {
        cfg.validate()?;
        check_compatible(cfg, &motion.config)?;
        let mut rng = init_rng(cfg, 1);
        let dims = CodecDims { input: INERTIA_DIM, hidden: cfg.hidden, latent: cfg.d_z };
        let encoder = ConvEncoder::new(dims, &mut rng);
        let codebook = Codebook::from_entries(motion.codebook.entries().clone(), cfg.gamma)?;
        let optimizer = AdamW::new(&encoder.params(), cfg.weight_decay);
        Ok(Self { config: cfg.clone(), encoder, codebook, optimizer, motion, norm })
    }

    pub fn param_names(&self) -> Vec<String> {
        self.encoder.param_names().into_iter().map(|n| format!("encoder.{n}")).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.encoder.params()
    }

    /// SHA-256 over the IMU encoder, codebook and normalization statistics.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        hash_tensors(&mut h, self.params());
        hash_codebook(&mut h, &self.codebook);
        for v in self.norm.mean.iter().chain(&self.norm.std) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Latent rows of chunk blocks `[n, 72, chunk_len]`.
    pub fn encode_chunks(&self, x: &Tensor) -> Result<Tensor> {
        encode_rows(&self.encoder, x.clone())
    }

    /// Tokens of a normalized IMU sequence, chunk by chunk; a trailing
    /// partial chunk produces no tokens.
    pub fn tokenize(&self, seq: &InertiaSequence) -> Result<Vec<usize>> {
        let x = chunk_tensor(seq, self.config.chunk_len)?;
        if x.shape()[0] == 0 {
            return Ok(Vec::new());
        }
        Ok(quantize(&self.encode_chunks(&x)?, &self.codebook)?.0)
    }

    /// IMU tokens to motion: gathers IMU code vectors and runs the frozen
    /// motion decoder over the whole token list.
    pub fn decode_tokens(&self, tokens: &[usize]) -> Result<MotionSequence> {
        decode_rows(&self.motion.decoder, &gather(&self.codebook, tokens)?, self.config.fps)
    }

    /// Tokenize then decode.
    pub fn reconstruct(&self, seq: &InertiaSequence) -> Result<MotionSequence> {
        self.decode_tokens(&self.tokenize(seq)?)
    }
}

/// Continuous regression baseline: the IMU tokenizer's chunked encoder
/// feeding a motion decoder directly, with no quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePoser {
    pub config: TrainConfig,
    pub encoder: ConvEncoder,
    pub decoder: ConvDecoder,
    pub optimizer: AdamW,
    pub norm: NormStats,
}

impl BaselinePoser {
    pub fn new(cfg: &TrainConfig, norm: NormStats) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_rng(cfg, 3);
        let enc_dims = CodecDims { input: INERTIA_DIM, hidden: cfg.hidden, latent: cfg.d_z };
        let dec_dims = CodecDims { input: MOTION_DIM, hidden: cfg.hidden, latent: cfg.d_z };
        let encoder = ConvEncoder::new(enc_dims, &mut rng);
        let decoder = ConvDecoder::new(dec_dims, DecoderRate::Frame, &mut rng);
        let mut m = Self { config: cfg.clone(), encoder, decoder, optimizer: AdamW::new(&[], 0.0), norm };
        m.optimizer = AdamW::new(&m.params(), cfg.weight_decay);
        Ok(m)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.encoder.param_names().into_iter().map(|n| format!("encoder.{n}")).collect();
        v.extend(self.decoder.param_names().into_iter().map(|n| format!("decoder.{n}")));
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        hash_tensors(&mut h, self.params());
        h.finalize().into()
    }

    /// Motion predicted from a normalized IMU sequence in whole chunks.
    pub fn predict(&self, seq: &InertiaSequence) -> Result<MotionSequence> {
        let x = chunk_tensor(seq, self.config.chunk_len)?;
        if x.shape()[0] == 0 {
            return Ok(MotionSequence { fps: self.config.fps, frames: Vec::new() });
        }
        let rows = encode_rows(&self.encoder, x)?;
        decode_rows(&self.decoder, &rows, self.config.fps)
    }
}

/// Codebook shape agreement between a stage-two config and its motion model.
pub(crate) fn check_compatible(cfg: &TrainConfig, motion: &TrainConfig) -> Result<()> {
    if cfg.k != motion.k || cfg.d_z != motion.d_z || cfg.l != motion.l {
        return Err(Error::CheckpointMismatch(format!(
            "motion model has K={} d_z={} l={}, config wants K={} d_z={} l={}",
            motion.k, motion.d_z, motion.l, cfg.k, cfg.d_z, cfg.l
        )));
    }
    Ok(())
}
