//! Two-stage training: the motion VQ-VAE, then the IMU tokenizer against
//! the frozen motion model, plus the continuous regression baseline.

mod checkpoint;
mod config;
pub mod data;
mod model;
mod report;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, ModelKind, CHECKPOINT_MAGIC,
};
pub use config::TrainConfig;
pub use data::{pair_corpus, synthetic_motion_corpus, PairedCorpus, PairedSequence};
pub use model::{BaselinePoser, ImuTokenizer, MotionTokenizer};
pub use report::{StepRecord, TrainReport};

use crate::error::{Error, Result};
use crate::gradnet::{bind, cosine_lr, BoundParams, Tape, Tensor};
use crate::imusim::INERTIA_DIM;
use crate::motion::{MotionSequence, MOTION_DIM};
use crate::vqcodec::{
    batch_token_frequency, frequency_values, imu_tokenizer_losses, motion_vq_losses, GumbelNoise, ImuLossInputs,
    MotionLossInputs, GUMBEL_TEMPERATURE,
};
use crate::vqcodec::{js_divergence, perplexity, quantize, zipf_target, Codebook, TokenFrequency};
use data::{collect_motion_windows, collect_paired_windows, stack, BatchSampler};
use model::{check_compatible, output_head};

const TRAIN_STREAM: u64 = 3;
/// Lloyd iterations for the codebook start on the first batch.
const KMEANS_ITERATIONS: usize = 10;

fn train_rng(cfg: &TrainConfig, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((TRAIN_STREAM << 8) | purpose);
    rng
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Per-step scalars of the motion objective, evaluated without updating.
struct MotionStep {
    record: Vec<(&'static str, f64)>,
    grads: Vec<Tensor>,
    latents: Tensor,
    indices: Vec<usize>,
}

fn motion_step(model: &MotionTokenizer, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<MotionStep> {
    let cfg = &model.config;
    let bsz = x.shape()[0];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = bind(&mut tape, &model.params(), true);
    let mut cur = BoundParams::new(&vars);
    let z = model.encoder.forward(&mut tape, &mut cur, xv)?;
    let zr = tape.to_rows(z)?;
    let latents = tape.value(zr).clone();
    let (indices, codes) = quantize(&latents, &model.codebook)?;
    let b = tape.constant(codes);
    let st = tape.straight_through(zr, b)?;
    let q = tape.from_rows(st, bsz)?;
    let y = model.decoder.forward(&mut tape, &mut cur, q)?;
    let m_hat = output_head(&mut tape, y)?;
    let l = motion_vq_losses(&mut tape, &MotionLossInputs { m_hat, target: x, z: zr, b }, &cfg.weights)?;
    let f_motion = frequency_values(&latents, &model.codebook, GUMBEL_TEMPERATURE, GumbelNoise::Sample(rng))?;
    let js_zipf = js_divergence(&f_motion, &zipf_target(&cfg.zipf()))?;
    let g = tape.backward(l.total)?;
    let grads = vars.iter().map(|&v| g.get_or_zeros(v)).collect();
    let v = |var| tape.value(var).item();
    let record = vec![
        ("total", v(l.total)),
        ("recon", v(l.recon)),
        ("commit", v(l.commit)),
        ("contact", v(l.contact)),
        ("slide", v(l.slide)),
        ("perplexity", perplexity(&indices, cfg.k)),
        ("js_motion_zipf", js_zipf),
    ];
    Ok(MotionStep { record, grads, latents, indices })
}

fn update_codebook(cb: &mut Codebook, z: &Tensor, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<usize> {
    cb.ema_update(z, idx)?;
    cb.reinit_dead(z, rng)
}

/// Stage one. Trains encoder and decoder with AdamW under cosine annealing
/// on the motion objective; the codebook starts from k-means on the first
/// batch's latents and then follows EMA updates. Deterministic given
/// `cfg.seed`.
pub fn train_motion_vqvae(corpus: &[MotionSequence], cfg: &TrainConfig) -> Result<(MotionTokenizer, TrainReport)> {
    cfg.validate()?;
    let windows = collect_motion_windows(corpus, cfg)?;
    let mut model = MotionTokenizer::new(cfg)?;
    let mut sampler = BatchSampler::new(windows.len(), cfg.batch_size, cfg.seed)?;
    let mut rng = train_rng(cfg, 0);
    let shape = [1, MOTION_DIM, cfg.window];
    let mut batch = sampler.next_batch();
    let first = stack(&batch.iter().map(|&i| windows[i].as_slice()).collect::<Vec<_>>(), &shape)?;
    model.codebook.kmeans_init(&model.encode(&first)?, KMEANS_ITERATIONS, &mut rng)?;
    let mut report = TrainReport::new("motion");
    for step in 0..cfg.total_steps {
        let started = Instant::now();
        let x = stack(&batch.iter().map(|&i| windows[i].as_slice()).collect::<Vec<_>>(), &shape)?;
        let lr = cosine_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min)?;
        let out = motion_step(&model, &x, &mut rng)?;
        let MotionTokenizer { encoder, decoder, optimizer, .. } = &mut model;
        let mut params = encoder.params_mut();
        params.extend(decoder.params_mut());
        optimizer.step(&mut params, &out.grads, lr)?;
        let moved = update_codebook(&mut model.codebook, &out.latents, &out.indices, &mut rng)?;
        let mut scalars = out.record;
        scalars.push(("reinit", moved as f64));
        report.push(StepRecord { step, lr, scalars, wall_ms: ms_since(started) })?;
        batch = sampler.next_batch();
    }
    Ok((model, report))
}

/// Motion objective terms of `model` on channel-major windows
/// `[B, 271, T]` without any update.
pub fn evaluate_motion(model: &MotionTokenizer, x: &Tensor) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = train_rng(&model.config, 9);
    Ok(motion_step(model, x, &mut rng)?.record)
}

/// Stage-two inputs of one window precomputed from the frozen motion model.
struct PairedWindow {
    imu: Vec<f64>,
    motion_latents: Tensor,
    motion_codes: Tensor,
}

fn precompute_pairs(corpus: &PairedCorpus, motion: &MotionTokenizer, cfg: &TrainConfig) -> Result<Vec<PairedWindow>> {
    let raw = collect_paired_windows(corpus, cfg)?;
    crate::par::map(&raw, |(m, imu)| {
        let x = Tensor::new(vec![1, MOTION_DIM, cfg.window], m.clone())?;
        let z = motion.encode(&x)?;
        let (_, codes) = quantize(&z, &motion.codebook)?;
        Ok(PairedWindow { imu: imu.clone(), motion_latents: z, motion_codes: codes })
    })
    .into_iter()
    .collect()
}

fn concat_rows(ts: &[&Tensor]) -> Result<Tensor> {
    let d = ts[0].shape()[1];
    let mut data = Vec::new();
    for t in ts {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![data.len() / d, d], data)
}

/// Batch token frequency of IMU latents against the IMU codebook, as used by
/// the stage-two objective.
pub fn imu_frequency(model: &ImuTokenizer, latents: &Tensor, rng: &mut ChaCha8Rng) -> Result<TokenFrequency> {
    frequency_values(latents, &model.codebook, GUMBEL_TEMPERATURE, GumbelNoise::Sample(rng))
}

/// Stage two. The motion model is frozen: its parameters never enter the
/// tape as trainable and its digest is checked after training. The IMU
/// encoder is trained on the code-matching and distribution-matching
/// objective; the IMU codebook follows EMA updates.
pub fn train_imu_tokenizer(
    corpus: &PairedCorpus,
    motion: &MotionTokenizer,
    cfg: &TrainConfig,
) -> Result<(ImuTokenizer, TrainReport)> {
    cfg.validate()?;
    check_compatible(cfg, &motion.config)?;
    let before = motion.digest();
    let windows = precompute_pairs(corpus, motion, cfg)?;
    let mut model = ImuTokenizer::new(cfg, motion.clone(), corpus.norm.clone())?;
    let mut sampler = BatchSampler::new(windows.len(), cfg.batch_size, cfg.seed)?;
    let mut rng = train_rng(cfg, 1);
    let f_zipf = zipf_target(&cfg.zipf());
    let chunks = cfg.window / cfg.chunk_len;
    let mut report = TrainReport::new("imu");
    for step in 0..cfg.total_steps {
        let started = Instant::now();
        let batch = sampler.next_batch();
        let x = stack(
            &batch.iter().map(|&i| windows[i].imu.as_slice()).collect::<Vec<_>>(),
            &[chunks, INERTIA_DIM, cfg.chunk_len],
        )?;
        let b_motion = concat_rows(&batch.iter().map(|&i| &windows[i].motion_codes).collect::<Vec<_>>())?;
        let z_motion = concat_rows(&batch.iter().map(|&i| &windows[i].motion_latents).collect::<Vec<_>>())?;
        let f_motion =
            frequency_values(&z_motion, &model.motion.codebook, GUMBEL_TEMPERATURE, GumbelNoise::Sample(&mut rng))?;

        let lr = cosine_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let vars = bind(&mut tape, &model.encoder.params(), true);
        let z = model.encoder.forward(&mut tape, &mut BoundParams::new(&vars), xv)?;
        let zr = tape.to_rows(z)?;
        let latents = tape.value(zr).clone();
        let (indices, codes) = quantize(&latents, &model.codebook)?;
        let b_imu = tape.constant(codes);
        let cb = tape.constant(model.codebook.entries().clone());
        let f_imu = batch_token_frequency(&mut tape, zr, cb, GUMBEL_TEMPERATURE, GumbelNoise::Sample(&mut rng))?;
        let inp = ImuLossInputs { z: zr, b_imu, b_motion: &b_motion, f_imu, f_motion: &f_motion, f_zipf: &f_zipf };
        let l = imu_tokenizer_losses(&mut tape, &inp, &cfg.weights)?;
        let g = tape.backward(l.total)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| g.get_or_zeros(v)).collect();
        let v = |var| tape.value(var).item();
        let mut scalars = vec![
            ("total", v(l.total)),
            ("code", v(l.code)),
            ("dist", v(l.dist)),
            ("js_imu_motion", v(l.js_imu_motion)),
            ("js_motion_zipf", v(l.js_motion_zipf)),
            ("perplexity", perplexity(&indices, cfg.k)),
        ];
        model.optimizer.step(&mut model.encoder.params_mut(), &grads, lr)?;
        let moved = update_codebook(&mut model.codebook, &latents, &indices, &mut rng)?;
        scalars.push(("reinit", moved as f64));
        report.push(StepRecord { step, lr, scalars, wall_ms: ms_since(started) })?;
    }
    let after = model.motion.digest();
    if before != after {
        return Err(Error::CheckpointMismatch("motion model changed during stage two".into()));
    }
    report.frozen_digest = Some(after);
    Ok((model, report))
}

/// Trains the continuous baseline on the reconstruction term alone, with the
/// same windows, batching and schedule as the IMU tokenizer.
pub fn train_baseline(corpus: &PairedCorpus, cfg: &TrainConfig) -> Result<(BaselinePoser, TrainReport)> {
    cfg.validate()?;
    let windows = collect_paired_windows(corpus, cfg)?;
    let mut model = BaselinePoser::new(cfg, corpus.norm.clone())?;
    let mut sampler = BatchSampler::new(windows.len(), cfg.batch_size, cfg.seed)?;
    let chunks = cfg.window / cfg.chunk_len;
    let mut report = TrainReport::new("baseline");
    for step in 0..cfg.total_steps {
        let started = Instant::now();
        let batch = sampler.next_batch();
        let x = stack(
            &batch.iter().map(|&i| windows[i].1.as_slice()).collect::<Vec<_>>(),
            &[chunks, INERTIA_DIM, cfg.chunk_len],
        )?;
        let target = stack(&batch.iter().map(|&i| windows[i].0.as_slice()).collect::<Vec<_>>(), &[
            1,
            MOTION_DIM,
            cfg.window,
        ])?;
        let lr = cosine_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let vars = bind(&mut tape, &model.params(), true);
        let mut cur = BoundParams::new(&vars);
        let z = model.encoder.forward(&mut tape, &mut cur, xv)?;
        let zr = tape.to_rows(z)?;
        let q = tape.from_rows(zr, batch.len())?;
        let y = model.decoder.forward(&mut tape, &mut cur, q)?;
        let m_hat = output_head(&mut tape, y)?;
        let tv = tape.constant(target);
        let d = tape.sub(m_hat, tv)?;
        let d2 = tape.square(d);
        let recon = tape.mean(d2);
        let total = tape.scale(recon, cfg.weights.recon);
        let g = tape.backward(total)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| g.get_or_zeros(v)).collect();
        let scalars = vec![("total", tape.value(total).item()), ("recon", tape.value(recon).item())];
        let BaselinePoser { encoder, decoder, optimizer, .. } = &mut model;
        let mut params = encoder.params_mut();
        params.extend(decoder.params_mut());
        optimizer.step(&mut params, &grads, lr)?;
        report.push(StepRecord { step, lr, scalars, wall_ms: ms_since(started) })?;
    }
    Ok((model, report))
}
