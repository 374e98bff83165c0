use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{check_compatible, init_rng};
use super::{BaselinePoser, ImuTokenizer, MotionTokenizer, TrainConfig};
use crate::error::{Error, Result};
use crate::gradnet::{AdamW, CodecDims, ConvDecoder, ConvEncoder, DecoderRate, Tensor};
use crate::imusim::{NormStats, ACCEL_DIM, INERTIA_DIM};
use crate::motion::MOTION_DIM;
use crate::vqcodec::Codebook;
use crate::wire;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MJC1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Motion = 1,
    Imu = 2,
    Baseline = 3,
}

impl ModelKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::Motion),
            2 => Ok(Self::Imu),
            3 => Ok(Self::Baseline),
            _ => Err(Error::Format(format!("unknown model kind {v}"))),
        }
    }
}

/// Serialized model state: every parameter, codebook accumulator and
/// optimizer moment as named f64 tensors, the config, and for the IMU
/// tokenizer the embedded frozen motion model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: TrainConfig,
    /// Optimizer step count.
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
    pub inner: Option<Box<Checkpoint>>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fails with `DigestMismatch` unless the stored config equals `cfg`.
    pub fn verify_config(&self, cfg: &TrainConfig) -> Result<()> {
        if self.config.digest() != cfg.digest() {
            return Err(Error::DigestMismatch("checkpoint was trained with a different config".into()));
        }
        Ok(())
    }
}

fn write_body(out: &mut Vec<u8>, c: &Checkpoint) -> Result<()> {
    out.push(c.kind as u8);
    let text = c.config.to_text();
    out.extend_from_slice(&wire::u32_len(text.len())?.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&c.config.digest());
    out.extend_from_slice(&c.step.to_le_bytes());
    out.extend_from_slice(&wire::u32_len(c.tensors.len())?.to_le_bytes());
    for (name, t) in &c.tensors {
        let n = u16::try_from(name.len()).map_err(|_| Error::OutOfRange(format!("tensor name {name:?}")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&wire::u32_len(t.shape().len())?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        wire::write_f64s(out, t.data())?;
    }
    match &c.inner {
        Some(inner) => {
            out.push(1);
            write_body(out, inner)?;
        }
        None => out.push(0),
    }
    Ok(())
}

/// Writes `MJC1`: magic, version (u32), the body, and a SHA-256 trailer
/// over everything before it. The body holds the model kind (u8), the
/// config text (u32 length + UTF-8) and its 32-byte digest, the optimizer
/// step (u64), the tensor count (u32), then per tensor its name (u16 length
/// + UTF-8), rank (u32), dims (u64 each) and f64 values, and finally a
/// nested-model flag (u8) followed by the nested body when set.
pub fn write_checkpoint<W: Write>(mut w: W, c: &Checkpoint) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_body(&mut out, c)?;
    let sum: [u8; 32] = Sha256::digest(&out).into();
    out.extend_from_slice(&sum);
    w.write_all(&out)?;
    Ok(())
}

fn read_body(r: &mut &[u8], depth: usize) -> Result<Checkpoint> {
    let kind = ModelKind::from_u8(wire::read_array::<_, 1>(r)?[0])?;
    let len = wire::read_u32(r)? as usize;
    if len > r.len() {
        return Err(Error::Format("unexpected end of data".into()));
    }
    let (text, rest) = r.split_at(len);
    *r = rest;
    let text = std::str::from_utf8(text).map_err(|_| Error::Format("config text is not UTF-8".into()))?;
    let config = TrainConfig::parse(text).map_err(|e| Error::Format(format!("config: {e}")))?;
    let digest: [u8; 32] = wire::read_array(r)?;
    if config.digest() != digest {
        return Err(Error::DigestMismatch("stored config digest does not match the config".into()));
    }
    let step = wire::read_u64(r)?;
    let count = wire::read_u32(r)? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let n = wire::read_u16(r)? as usize;
        if n > r.len() {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let (name, rest) = r.split_at(n);
        *r = rest;
        let name = String::from_utf8(name.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = wire::read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(wire::read_u64(r)? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.filter(|&k| k.saturating_mul(8) <= r.len()).ok_or_else(|| {
            Error::Format(format!("tensor {name:?} of shape {shape:?} exceeds the remaining data"))
        })?;
        let data = wire::read_f64s(r, numel)?;
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let inner = match wire::read_array::<_, 1>(r)?[0] {
        0 => None,
        1 if depth == 0 => Some(Box::new(read_body(r, depth + 1)?)),
        v => return Err(Error::Format(format!("bad nested-model flag {v}"))),
    };
    Ok(Checkpoint { kind, config, step, tensors, inner })
}

/// Reads an `MJC1` checkpoint. The whole input is validated before anything
/// is returned.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 8 + 32 {
        return Err(Error::Format("unexpected end of data".into()));
    }
    let mut head = &buf[..];
    wire::expect_magic(&mut head, CHECKPOINT_MAGIC)?;
    let version = wire::read_u32(&mut head)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let (payload, trailer) = buf.split_at(buf.len() - 32);
    let sum: [u8; 32] = Sha256::digest(payload).into();
    if sum[..] != trailer[..] {
        return Err(Error::Format("checksum mismatch (truncated or corrupted file)".into()));
    }
    let mut body = &payload[8..];
    let c = read_body(&mut body, 0)?;
    if !body.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", body.len())));
    }
    Ok(c)
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, c)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(std::fs::File::open(path)?)
}

fn named<'a>(names: Vec<String>, ts: Vec<&'a Tensor>) -> Vec<(String, Tensor)> {
    names.into_iter().zip(ts).map(|(n, t)| (n, t.clone())).collect()
}

fn codebook_tensors(cb: &Codebook) -> Result<Vec<(String, Tensor)>> {
    let (k, d) = (cb.k(), cb.dim());
    Ok(vec![
        ("codebook.entries".into(), cb.entries().clone()),
        ("codebook.sigma".into(), Tensor::new(vec![k, d], cb.sigma().to_vec())?),
        ("codebook.delta".into(), Tensor::new(vec![k], cb.delta().to_vec())?),
        ("codebook.dead".into(), Tensor::new(vec![k], cb.dead_counters().iter().map(|&v| v as f64).collect())?),
    ])
}

fn optimizer_tensors(opt: &AdamW) -> Vec<(String, Tensor)> {
    let mut v = Vec::new();
    for (i, (m, s)) in opt.m.iter().zip(&opt.v).enumerate() {
        v.push((format!("adam.m.{i}"), m.clone()));
        v.push((format!("adam.v.{i}"), s.clone()));
    }
    v
}

fn norm_tensors(n: &NormStats) -> Result<Vec<(String, Tensor)>> {
    Ok(vec![
        ("norm.mean".into(), Tensor::new(vec![ACCEL_DIM], n.mean.to_vec())?),
        ("norm.std".into(), Tensor::new(vec![ACCEL_DIM], n.std.to_vec())?),
    ])
}

/// Name lookup that checks every tensor against the expected shape.
struct Tensors<'a>(BTreeMap<&'a str, &'a Tensor>);

impl<'a> Tensors<'a> {
    fn new(c: &'a Checkpoint, kind: ModelKind) -> Result<Self> {
        if c.kind != kind {
            return Err(Error::CheckpointMismatch(format!("expected a {kind:?} checkpoint, found {:?}", c.kind)));
        }
        Ok(Self(c.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect()))
    }

    fn take(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.0.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))?;
        if t.shape() != shape {
            return Err(Error::Format(format!("tensor {name:?} has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok((*t).clone())
    }

    fn fill(&self, names: Vec<String>, params: Vec<&mut Tensor>) -> Result<()> {
        let values: Vec<Tensor> =
            names.iter().zip(&params).map(|(n, p)| self.take(n, p.shape())).collect::<Result<_>>()?;
        for (p, v) in params.into_iter().zip(values) {
            *p = v;
        }
        Ok(())
    }

    fn codebook(&self, cfg: &TrainConfig) -> Result<Codebook> {
        let (k, d) = (cfg.k, cfg.d_z);
        let dead = self.take("codebook.dead", &[k])?;
        if dead.data().iter().any(|&v| !(v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0)) {
            return Err(Error::Format("dead counters must be u32 values".into()));
        }
        Codebook::from_parts(
            self.take("codebook.entries", &[k, d])?,
            self.take("codebook.sigma", &[k, d])?.into_data(),
            self.take("codebook.delta", &[k])?.into_data(),
            cfg.gamma,
            dead.data().iter().map(|&v| v as u32).collect(),
        )
        .map_err(|e| Error::Format(format!("codebook: {e}")))
    }

    fn optimizer(&self, params: &[&Tensor], cfg: &TrainConfig, step: u64) -> Result<AdamW> {
        let mut opt = AdamW::new(params, cfg.weight_decay);
        for (i, p) in params.iter().enumerate() {
            opt.m[i] = self.take(&format!("adam.m.{i}"), p.shape())?;
            opt.v[i] = self.take(&format!("adam.v.{i}"), p.shape())?;
        }
        opt.step = step;
        Ok(opt)
    }

    fn norm(&self) -> Result<NormStats> {
        let mean = self.take("norm.mean", &[ACCEL_DIM])?.into_data();
        let std = self.take("norm.std", &[ACCEL_DIM])?.into_data();
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Format("non-positive standard deviation".into()));
        }
        Ok(NormStats { mean: mean.try_into().unwrap(), std: std.try_into().unwrap() })
    }
}

impl MotionTokenizer {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = named(self.param_names(), self.params());
        tensors.extend(codebook_tensors(&self.codebook)?);
        tensors.extend(optimizer_tensors(&self.optimizer));
        Ok(Checkpoint {
            kind: ModelKind::Motion,
            config: self.config.clone(),
            step: self.optimizer.step,
            tensors,
            inner: None,
        })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let t = Tensors::new(c, ModelKind::Motion)?;
        let cfg = &c.config;
        let mut rng = init_rng(cfg, 0);
        let dims = CodecDims { input: MOTION_DIM, hidden: cfg.hidden, latent: cfg.d_z };
        let mut encoder = ConvEncoder::new(dims, &mut rng);
        let mut decoder = ConvDecoder::new(dims, DecoderRate::Latent, &mut rng);
        t.fill(encoder.param_names().into_iter().map(|n| format!("encoder.{n}")).collect(), encoder.params_mut())?;
        t.fill(decoder.param_names().into_iter().map(|n| format!("decoder.{n}")).collect(), decoder.params_mut())?;
        let codebook = t.codebook(cfg)?;
        let mut params = encoder.params();
        params.extend(decoder.params());
        let optimizer = t.optimizer(&params, cfg, c.step)?;
        Ok(Self { config: cfg.clone(), encoder, decoder, codebook, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

impl ImuTokenizer {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = named(self.param_names(), self.params());
        tensors.extend(codebook_tensors(&self.codebook)?);
        tensors.extend(optimizer_tensors(&self.optimizer));
        tensors.extend(norm_tensors(&self.norm)?);
        Ok(Checkpoint {
            kind: ModelKind::Imu,
            config: self.config.clone(),
            step: self.optimizer.step,
            tensors,
            inner: Some(Box::new(self.motion.to_checkpoint()?)),
        })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let t = Tensors::new(c, ModelKind::Imu)?;
        let cfg = &c.config;
        let inner = c.inner.as_ref().ok_or_else(|| Error::Format("IMU checkpoint lacks its motion model".into()))?;
        let motion = MotionTokenizer::from_checkpoint(inner)?;
        check_compatible(cfg, &motion.config)?;
        let mut rng = init_rng(cfg, 1);
        let dims = CodecDims { input: INERTIA_DIM, hidden: cfg.hidden, latent: cfg.d_z };
        let mut encoder = ConvEncoder::new(dims, &mut rng);
        t.fill(encoder.param_names().into_iter().map(|n| format!("encoder.{n}")).collect(), encoder.params_mut())?;
        let codebook = t.codebook(cfg)?;
        let optimizer = t.optimizer(&encoder.params(), cfg, c.step)?;
        let norm = t.norm()?;
        Ok(Self { config: cfg.clone(), encoder, codebook, optimizer, motion, norm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

impl BaselinePoser {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = named(self.param_names(), self.params());
        tensors.extend(optimizer_tensors(&self.optimizer));
        tensors.extend(norm_tensors(&self.norm)?);
        Ok(Checkpoint {
            kind: ModelKind::Baseline,
            config: self.config.clone(),
            step: self.optimizer.step,
            tensors,
            inner: None,
        })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let t = Tensors::new(c, ModelKind::Baseline)?;
        let cfg = &c.config;
        let mut model = BaselinePoser::new(cfg, t.norm()?)?;
        let names = model.param_names();
        let BaselinePoser { encoder, decoder, .. } = &mut model;
        let mut params = encoder.params_mut();
        params.extend(decoder.params_mut());
        t.fill(names, params)?;
        model.optimizer = t.optimizer(&model.params(), cfg, c.step)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}
