use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradnet::DOWNSAMPLE;
use crate::vqcodec::{LossWeights, ZipfParams};

/// Hyperparameters of both training stages and the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Codebook size.
    pub k: usize,
    /// Latent width.
    pub d_z: usize,
    /// Frames per token.
    pub l: usize,
    /// EMA decay.
    pub gamma: f64,
    pub weights: LossWeights,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    /// Training window length `T` in frames.
    pub window: usize,
    /// Frames per independently encoded IMU chunk.
    pub chunk_len: usize,
    /// Hidden channels of the convolution stacks.
    pub hidden: usize,
    pub zipf_alpha: f64,
    pub zipf_beta: f64,
    pub seed: u64,
    pub fps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 64,
            d_z: 64,
            l: 4,
            gamma: 0.99,
            weights: LossWeights::default(),
            lr_max: 2e-4,
            lr_min: 2e-6,
            weight_decay: 0.01,
            batch_size: 16,
            total_steps: 5000,
            window: 64,
            chunk_len: 16,
            hidden: 128,
            zipf_alpha: 1.0,
            zipf_beta: 2.7,
            seed: 0,
            fps: 60.0,
        }
    }
}

const KEYS: &[&str] = &[
    "k",
    "d_z",
    "l",
    "gamma",
    "lambda_recon",
    "lambda_commit",
    "lambda_contact",
    "lambda_slide",
    "lambda_code",
    "lambda_dist",
    "lambda_zipf",
    "lr_max",
    "lr_min",
    "weight_decay",
    "batch_size",
    "total_steps",
    "window",
    "chunk_len",
    "hidden",
    "zipf_alpha",
    "zipf_beta",
    "seed",
    "fps",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    /// The paper-scale setting: `K = 1024`, batch 512.
    pub fn paper_scale() -> Self {
        Self { k: 1024, batch_size: 512, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        self.weights.validate()?;
        if self.k < 2 || self.k > u16::MAX as usize + 1 {
            return bad(format!("k = {} outside 2..=65536", self.k));
        }
        if self.d_z == 0 || self.hidden == 0 {
            return bad("d_z and hidden must be positive".into());
        }
        if self.l != DOWNSAMPLE {
            return bad(format!("l = {} unsupported: the encoder downsamples by {DOWNSAMPLE}", self.l));
        }
        if self.window == 0 || self.window % self.l != 0 {
            return bad(format!("l = {} must divide window = {}", self.l, self.window));
        }
        if self.chunk_len == 0 || self.chunk_len % self.l != 0 || self.window % self.chunk_len != 0 {
            return bad(format!(
                "chunk_len = {} must be a multiple of l and divide window = {}",
                self.chunk_len, self.window
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} outside (0, 1)", self.gamma));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite() && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad(format!("need 0 <= lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay = {}", self.weight_decay));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps = {}", self.fps));
        }
        ZipfParams::new(self.zipf_alpha, self.zipf_beta, self.k).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        Ok(())
    }

    pub fn zipf(&self) -> ZipfParams {
        ZipfParams { alpha: self.zipf_alpha, beta: self.zipf_beta, k: self.k }
    }

    /// Tokens per training window.
    pub fn tokens_per_window(&self) -> usize {
        self.window / self.l
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "k" => self.k = num(key, v)?,
            "d_z" => self.d_z = num(key, v)?,
            "l" => self.l = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "lambda_recon" => w.recon = num(key, v)?,
            "lambda_commit" => w.commit = num(key, v)?,
            "lambda_contact" => w.contact = num(key, v)?,
            "lambda_slide" => w.slide = num(key, v)?,
            "lambda_code" => w.code = num(key, v)?,
            "lambda_dist" => w.dist = num(key, v)?,
            "lambda_zipf" => w.zipf = num(key, v)?,
            "lr_max" => self.lr_max = num(key, v)?,
            "lr_min" => self.lr_min = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "total_steps" => self.total_steps = num(key, v)?,
            "window" => self.window = num(key, v)?,
            "chunk_len" => self.chunk_len = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "zipf_alpha" => self.zipf_alpha = num(key, v)?,
            "zipf_beta" => self.zipf_beta = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "fps" => self.fps = num(key, v)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let w = &self.weights;
        let f = |x: f64| format!("{x:?}");
        match key {
            "k" => self.k.to_string(),
            "d_z" => self.d_z.to_string(),
            "l" => self.l.to_string(),
            "gamma" => f(self.gamma),
            "lambda_recon" => f(w.recon),
            "lambda_commit" => f(w.commit),
            "lambda_contact" => f(w.contact),
            "lambda_slide" => f(w.slide),
            "lambda_code" => f(w.code),
            "lambda_dist" => f(w.dist),
            "lambda_zipf" => f(w.zipf),
            "lr_max" => f(self.lr_max),
            "lr_min" => f(self.lr_min),
            "weight_decay" => f(self.weight_decay),
            "batch_size" => self.batch_size.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "window" => self.window.to_string(),
            "chunk_len" => self.chunk_len.to_string(),
            "hidden" => self.hidden.to_string(),
            "zipf_alpha" => f(self.zipf_alpha),
            "zipf_beta" => f(self.zipf_beta),
            "seed" => self.seed.to_string(),
            "fps" => f(self.fps),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    /// The result is validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form: every key in a fixed order, floats printed
    /// round-trip exact.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    /// SHA-256 of [`TrainConfig::to_text`].
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}
