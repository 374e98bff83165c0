use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::gradnet::Tensor;
use crate::imusim::{
    apply_drift, fit_norm_stats, normalize_acceleration, synthesize_imu, InertiaSequence, NoiseConfig, NormStats,
    SensorPlacement, GRAVITY, INERTIA_DIM,
};
use crate::motion::{
    build_motion_representation, generate_synthetic_motion, layout, MotionSequence, MotionStyle, Skeleton, MOTION_DIM,
};

/// A motion clip with its frame-aligned, normalized IMU readings.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSequence {
    pub motion: MotionSequence,
    pub imu: InertiaSequence,
}

/// Paired clips plus the acceleration statistics used to normalize them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCorpus {
    pub pairs: Vec<PairedSequence>,
    pub norm: NormStats,
}

/// Window start frames for crops of `window` frames at stride `window/2`.
pub fn window_starts(len: usize, window: usize) -> Vec<usize> {
    if window == 0 || len < window {
        return Vec::new();
    }
    let stride = (window / 2).max(1);
    (0..=(len - window) / stride).map(|i| i * stride).collect()
}

/// Channel-major `[271, len]` crop starting at `start`. The root's horizontal
/// position is re-expressed relative to the crop's first frame.
pub fn motion_window(seq: &MotionSequence, start: usize, len: usize) -> Result<Vec<f64>> {
    if start + len > seq.len() {
        return Err(Error::OutOfRange(format!("window {start}..{} of {} frames", start + len, seq.len())));
    }
    let frames: Vec<[f64; MOTION_DIM]> = seq.frames[start..start + len].iter().map(|f| f.flatten()).collect();
    let (x0, z0) = (frames[0][layout::R], frames[0][layout::R + 2]);
    let mut out = vec![0.0; MOTION_DIM * len];
    for (t, f) in frames.iter().enumerate() {
        for c in 0..MOTION_DIM {
            out[c * len + t] = f[c];
        }
        out[layout::R * len + t] -= x0;
        out[(layout::R + 2) * len + t] -= z0;
    }
    Ok(out)
}

/// `[len/chunk, 72, chunk]` blocks of consecutive IMU frames.
pub fn imu_chunks(seq: &InertiaSequence, start: usize, len: usize, chunk: usize) -> Result<Vec<f64>> {
    if chunk == 0 || len % chunk != 0 {
        return Err(Error::InvalidArgument(format!("{len} frames do not split into chunks of {chunk}")));
    }
    if start + len > seq.len() {
        return Err(Error::OutOfRange(format!("window {start}..{} of {} frames", start + len, seq.len())));
    }
    let mut out = vec![0.0; INERTIA_DIM * len];
    for ci in 0..len / chunk {
        let base = ci * INERTIA_DIM * chunk;
        for t in 0..chunk {
            let f = seq.frames[start + ci * chunk + t].flatten();
            for c in 0..INERTIA_DIM {
                out[base + c * chunk + t] = f[c];
            }
        }
    }
    Ok(out)
}

/// Channel-major `[271, T]` decoder output back to a sequence.
pub fn motion_from_channels(x: &[f64], fps: f64) -> Result<MotionSequence> {
    if x.len() % MOTION_DIM != 0 {
        return Err(Error::ShapeMismatch(format!("{} values are not whole frames", x.len())));
    }
    let t = x.len() / MOTION_DIM;
    let mut flat = vec![0.0; x.len()];
    for c in 0..MOTION_DIM {
        for i in 0..t {
            flat[i * MOTION_DIM + c] = x[c * t + i];
        }
    }
    MotionSequence::from_flat(fps, &flat)
}

/// Stacks per-item blocks of `shape` into one tensor with the leading
/// dimensions multiplied out.
pub(crate) fn stack(items: &[&[f64]], shape: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(items.iter().map(|i| i.len()).sum());
    for i in items {
        data.extend_from_slice(i);
    }
    let mut s = shape.to_vec();
    s[0] *= items.len();
    Tensor::new(s, data)
}

/// Deterministic batch order: a fresh seeded shuffle of all windows per
/// epoch, consumed `batch` at a time and wrapping across epochs.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SAMPLER_STREAM);
        let mut s = Self { n, batch, order: Vec::new(), pos: 0, rng };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.n).collect();
        for i in (1..self.n).rev() {
            let j = self.rng.random_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.n {
                self.shuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

const SAMPLER_STREAM: u64 = 1;

/// Synthetic clip `i` of a corpus: styles cycle, each clip has its own seed.
pub fn synthetic_motion(seed: u64, index: usize, duration_s: f64, fps: f64) -> Result<MotionSequence> {
    let style = MotionStyle::ALL[index % MotionStyle::ALL.len()];
    let track = generate_synthetic_motion(clip_seed(seed, index), duration_s, fps, style)?;
    build_motion_representation(&track, &Skeleton::standard())
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// `count` synthetic motion clips.
pub fn synthetic_motion_corpus(seed: u64, count: usize, duration_s: f64, fps: f64) -> Result<Vec<MotionSequence>> {
    crate::par::map_range(count, |i| synthetic_motion(seed, i, duration_s, fps)).into_iter().collect()
}

/// Simulated raw (unnormalized) IMU readings of a motion clip with the
/// default random-walk drift, seeded per clip.
pub fn simulate_imu(motion: &MotionSequence, drift_seed: u64) -> Result<InertiaSequence> {
    let track = crate::motion::RawPoseTrack::from_motion(motion);
    let imu = synthesize_imu(&track, &Skeleton::standard(), &SensorPlacement::standard(), &GRAVITY)?;
    apply_drift(&imu, &NoiseConfig { seed: drift_seed, ..NoiseConfig::default() })
}

/// Pairs every clip with drifted simulated IMU readings and normalizes the
/// acceleration with statistics fitted on this corpus, or with `norm` when
/// given (held-out data reuses the training statistics).
pub fn pair_corpus(motion: &[MotionSequence], seed: u64, norm: Option<&NormStats>) -> Result<PairedCorpus> {
    if motion.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let raw: Vec<InertiaSequence> = crate::par::map_range(motion.len(), |i| simulate_imu(&motion[i], clip_seed(seed, i)))
        .into_iter()
        .collect::<Result<_>>()?;
    let norm = match norm {
        Some(n) => n.clone(),
        None => fit_norm_stats(&raw)?,
    };
    let pairs = motion
        .iter()
        .zip(&raw)
        .map(|(m, r)| PairedSequence { motion: m.clone(), imu: normalize_acceleration(r, &norm) })
        .collect();
    Ok(PairedCorpus { pairs, norm })
}

/// Motion windows of every clip, channel-major.
pub(crate) fn collect_motion_windows(corpus: &[MotionSequence], cfg: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for seq in corpus {
        for s in window_starts(seq.len(), cfg.window) {
            out.push(motion_window(seq, s, cfg.window)?);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

/// Aligned motion windows and IMU chunk blocks of every pair.
pub(crate) fn collect_paired_windows(corpus: &PairedCorpus, cfg: &TrainConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = Vec::new();
    for p in &corpus.pairs {
        if p.motion.len() != p.imu.len() {
            return Err(Error::LengthMismatch { left: p.motion.len(), right: p.imu.len() });
        }
        for s in window_starts(p.motion.len(), cfg.window) {
            out.push((motion_window(&p.motion, s, cfg.window)?, imu_chunks(&p.imu, s, cfg.window, cfg.chunk_len)?));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}
