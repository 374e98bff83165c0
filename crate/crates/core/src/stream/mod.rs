//! Online chunked IMU tokenization, token decoding and the token wire format.

mod io;

pub use io::{read_tokens, write_tokens, TOKEN_HEADER_LEN, TOKEN_MAGIC, TOKEN_TRAILER_LEN, TOKEN_VERSION};

use crate::error::{Error, Result};
use crate::imusim::{normalize_acceleration, InertiaFrame, InertiaSequence, NormStats};
use crate::motion::{layout, MotionSequence};
use crate::trainer::ImuTokenizer;

/// Ordered IMU token ids with the metadata needed to decode them.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<u16>,
    /// Input frames per token.
    pub l: u32,
    pub fps: f64,
    /// Codebook size; every token is below it.
    pub k: u32,
    /// Digest of the producing IMU codebook.
    pub codebook_digest: [u8; 32],
    /// Input frame index of the first token.
    pub start_frame: u64,
}

impl TokenSequence {
    /// Empty sequence carrying a tokenizer's metadata.
    pub fn for_tokenizer(tok: &ImuTokenizer, start_frame: u64) -> Self {
        Self {
            tokens: Vec::new(),
            l: tok.config.l as u32,
            fps: tok.config.fps,
            k: tok.config.k as u32,
            codebook_digest: tok.codebook.digest(),
            start_frame,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks `l`, `fps`, `K` and that every token is below `K`.
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Format(format!("invalid l {} or fps {}", self.l, self.fps)));
        }
        if self.k == 0 || self.k > 1 << 16 {
            return Err(Error::Format(format!("codebook size {} outside 1..=65536", self.k)));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| u32::from(t) >= self.k) {
            return Err(Error::Format(format!("token {t} not below K = {}", self.k)));
        }
        Ok(())
    }
}

fn to_u16(tokens: Vec<usize>) -> Vec<u16> {
    // Codebook sizes are capped at 65536 by config validation.
    tokens.into_iter().map(|t| t as u16).collect()
}

/// Tokens of a raw sequence, normalized with the tokenizer's statistics and
/// encoded in independent whole chunks. A trailing partial chunk yields no
/// tokens.
pub fn tokenize_offline(tok: &ImuTokenizer, raw: &InertiaSequence) -> Result<TokenSequence> {
    let mut seq = TokenSequence::for_tokenizer(tok, 0);
    seq.tokens = to_u16(tok.tokenize(&normalize_acceleration(raw, &tok.norm))?);
    Ok(seq)
}

/// Incremental tokenizer state for one stream: frames waiting for a full
/// chunk, the normalization statistics and frame/token counters.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    chunk_len: usize,
    l: usize,
    norm: Option<NormStats>,
    pending: Vec<InertiaFrame>,
    frames_seen: u64,
    tokens_emitted: u64,
}

impl StreamState {
    /// `chunk_len` must be a positive multiple of `l`.
    pub fn new(chunk_len: usize, l: usize, norm: Option<NormStats>) -> Result<Self> {
        if l == 0 || chunk_len == 0 || chunk_len % l != 0 {
            return Err(Error::InvalidArgument(format!("chunk length {chunk_len} is not a multiple of l = {l}")));
        }
        Ok(Self { chunk_len, l, norm, pending: Vec::new(), frames_seen: 0, tokens_emitted: 0 })
    }

    /// State matching a tokenizer's chunk length, `l` and statistics.
    pub fn for_tokenizer(tok: &ImuTokenizer) -> Result<Self> {
        Self::new(tok.config.chunk_len, tok.config.l, Some(tok.norm.clone()))
    }

    pub fn attach_stats(&mut self, norm: NormStats) {
        self.norm = Some(norm);
    }

    /// Frames buffered towards the next chunk; always below the chunk length.
    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Index of the next token to be emitted.
    pub fn tokens_emitted(&self) -> u64 {
        self.tokens_emitted
    }

    /// Buffers raw frames and tokenizes every completed chunk, returning
    /// `chunk_len / l` tokens per chunk.
    pub fn push_frames(&mut self, tok: &ImuTokenizer, frames: &[InertiaFrame]) -> Result<Vec<u16>> {
        let norm = self.norm.as_ref().ok_or(Error::StatsMissing)?;
        if tok.config.chunk_len != self.chunk_len || tok.config.l != self.l {
            return Err(Error::CheckpointMismatch(format!(
                "stream expects chunk {} and l {}, tokenizer has {} and {}",
                self.chunk_len, self.l, tok.config.chunk_len, tok.config.l
            )));
        }
        self.pending.extend_from_slice(frames);
        self.frames_seen += frames.len() as u64;
        let ready = self.pending.len() / self.chunk_len * self.chunk_len;
        if ready == 0 {
            return Ok(Vec::new());
        }
        let rest = self.pending.split_off(ready);
        let chunks = InertiaSequence { fps: tok.config.fps, frames: std::mem::replace(&mut self.pending, rest) };
        let tokens = to_u16(tok.tokenize(&normalize_acceleration(&chunks, norm))?);
        self.tokens_emitted += tokens.len() as u64;
        Ok(tokens)
    }
}

/// Exponential smoothing of the decoded root states: each root channel
/// becomes `α·previous + (1 − α)·current`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSmoothing {
    pub alpha: f64,
}

impl RootSmoothing {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("smoothing factor {alpha} outside [0, 1)")));
        }
        Ok(Self { alpha })
    }

    fn apply(&self, seq: &MotionSequence) -> Result<MotionSequence> {
        let mut flat = seq.to_flat();
        let w = layout::WIDTH;
        for t in 1..seq.len() {
            for c in layout::R..layout::J_R {
                flat[t * w + c] = self.alpha * flat[(t - 1) * w + c] + (1.0 - self.alpha) * flat[t * w + c];
            }
        }
        MotionSequence::from_flat(seq.fps, &flat)
    }
}

/// Gathers the IMU code vectors of `tokens` and runs the frozen motion
/// decoder; `l` frames per token. Root smoothing is off unless given.
pub fn decode_tokens(tokens: &TokenSequence, tok: &ImuTokenizer, smoothing: Option<RootSmoothing>) -> Result<MotionSequence> {
    tokens.validate()?;
    if tokens.codebook_digest != tok.codebook.digest() {
        return Err(Error::DigestMismatch("token stream was produced by a different codebook".into()));
    }
    if tokens.l as usize != tok.config.l || tokens.k as usize != tok.config.k {
        return Err(Error::CheckpointMismatch(format!(
            "tokens use l {} and K {}, checkpoint has {} and {}",
            tokens.l, tokens.k, tok.config.l, tok.config.k
        )));
    }
    if tokens.is_empty() {
        return Ok(MotionSequence { fps: tokens.fps, frames: Vec::new() });
    }
    let ids: Vec<usize> = tokens.tokens.iter().map(|&t| usize::from(t)).collect();
    let mut out = tok.decode_tokens(&ids)?;
    out.fps = tokens.fps;
    match smoothing {
        Some(s) => s.apply(&out),
        None => Ok(out),
    }
}
