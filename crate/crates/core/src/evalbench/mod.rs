//! Pose metrics and the noise-robustness benchmark comparing the tokenized
//! pipeline with the continuous baseline on paired corrupted inputs.

mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use report::{parse_records, render_records, render_report, render_table, Method, MetricReport, MetricRow};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::imusim::{
    apply_corruption, apply_drift, normalize_acceleration, ChannelSigmas, InertiaSequence, NoiseConfig, SENSOR_COUNT,
};
use crate::motion::{forward_kinematics, MotionSequence, RawPoseTrack, Skeleton};
use crate::trainer::data::{motion_from_channels, motion_window, simulate_imu, synthetic_motion};
use crate::trainer::{BaselinePoser, ImuTokenizer, MotionTokenizer};

/// Number of random sensor combinations averaged for two or more corrupted
/// sensors.
pub const DEFAULT_COMBINATIONS: usize = 8;
/// Held-out benchmark clips.
pub const DEFAULT_SEQUENCES: usize = 16;

/// World joint positions of every frame through forward kinematics.
pub fn fk_positions(seq: &MotionSequence, skel: &Skeleton) -> Vec<Vec<Vec3>> {
    let track = RawPoseTrack::from_motion(seq);
    crate::par::map(track.frames(), |f| forward_kinematics(skel, f))
}

/// Mean per-joint position error in centimetres between the forward
/// kinematics of `pred` and `gt`, root states applied.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: gt.len() });
    }
    if pred.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    mpjpe_positions(&fk_positions(pred, skel), &fk_positions(gt, skel))
}

/// [`mpjpe`] on precomputed positions `[frames][joints]` in metres.
pub fn mpjpe_positions(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: gt.len() });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch { left: p.len(), right: g.len() });
        }
        sum += p.iter().zip(g).map(|(a, b)| (a - b).norm()).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(100.0 * sum / count as f64)
}

/// Mean norm of the third time derivative of joint positions, in units of
/// 10² m/s³. Interior frames use the five-point central difference, the
/// first and last two frames the nearest four-point one-sided difference;
/// all are exact on cubics.
pub fn jitter(positions: &[Vec<Vec3>], fps: f64) -> Result<f64> {
    let n = positions.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("fps {fps}")));
    }
    let joints = positions[0].len();
    if positions.iter().any(|p| p.len() != joints) || joints == 0 {
        return Err(Error::ShapeMismatch("joint count varies across frames".into()));
    }
    let s = fps * fps * fps;
    let p = |t: usize, j: usize| positions[t][j];
    let mut sum = 0.0;
    for t in 0..n {
        for j in 0..joints {
            let d = if t >= 2 && t + 2 < n {
                (p(t + 2, j) - 2.0 * p(t + 1, j) + 2.0 * p(t - 1, j) - p(t - 2, j)) * 0.5
            } else {
                let s = if t + 3 < n { t } else { t.saturating_sub(3) };
                p(s + 3, j) - 3.0 * p(s + 2, j) + 3.0 * p(s + 1, j) - p(s, j)
            };
            sum += d.norm() * s;
        }
    }
    Ok(1e-2 * sum / (n * joints) as f64)
}

/// Held-out clip: ground-truth motion and its raw (unnormalized) drifted
/// IMU readings.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSequence {
    pub id: String,
    pub motion: MotionSequence,
    pub imu: InertiaSequence,
}

/// `count` synthetic clips whose seeds are disjoint from a training corpus
/// generated with a different `seed`.
pub fn heldout_corpus(seed: u64, count: usize, duration_s: f64, fps: f64) -> Result<Vec<BenchSequence>> {
    crate::par::map_range(count, |i| {
        let motion = synthetic_motion(seed, i, duration_s, fps)?;
        let imu = simulate_imu(&motion, mix(seed, &[0xd1, i as u64]))?;
        Ok(BenchSequence { id: format!("heldout-{seed}-{i}"), motion, imu })
    })
    .into_iter()
    .collect()
}

/// Noise applied to the corrupted sensors of each benchmark case: per-frame
/// Gaussian noise plus an additional random-walk drift.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub levels: Vec<usize>,
    pub gaussian: ChannelSigmas,
    pub drift: ChannelSigmas,
    pub combinations: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    /// Gaussian scales near the per-channel signal spread of the synthetic
    /// corpus: 0.5 rad rotation, 3 m/s² acceleration, 2 rad/s angular rate;
    /// drift ten times the training default.
    fn default() -> Self {
        Self {
            levels: vec![1, 2, 3],
            gaussian: ChannelSigmas { orientation: 0.5, acceleration: 3.0, gyro: 2.0 },
            drift: ChannelSigmas { orientation: 0.02, acceleration: 0.1, gyro: 0.01 },
            combinations: DEFAULT_COMBINATIONS,
            seed: 0,
        }
    }
}

/// Frame-weighted metrics of one method over a set of clips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mpjpe: f64,
    pub jitter: f64,
    pub frames: usize,
}

impl Metrics {
    fn merge(parts: &[Metrics]) -> Metrics {
        let frames: usize = parts.iter().map(|m| m.frames).sum();
        let w = |f: fn(&Metrics) -> f64| {
            if frames == 0 {
                0.0
            } else {
                parts.iter().map(|m| f(m) * m.frames as f64).sum::<f64>() / frames as f64
            }
        };
        Metrics { mpjpe: w(|m| m.mpjpe), jitter: w(|m| m.jitter), frames }
    }
}

/// Both methods evaluated on the same corrupted inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseResult {
    pub tokenized: Metrics,
    pub baseline: Metrics,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a seed from a base seed and a path of indices.
fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |h, &p| splitmix(h ^ splitmix(p)))
}

/// Corrupted copy of a raw IMU clip: extra drift then Gaussian noise on
/// `sensors` only.
pub fn corrupt(imu: &InertiaSequence, sensors: &[usize], bench: &BenchConfig, seed: u64) -> Result<InertiaSequence> {
    if sensors.is_empty() {
        return Ok(imu.clone());
    }
    let cfg = NoiseConfig {
        drift_sigma: bench.drift,
        gaussian_sigma: bench.gaussian,
        drift_sensors: sensors.to_vec(),
        corrupted_sensors: sensors.to_vec(),
        dropout: [false; SENSOR_COUNT],
        seed,
    };
    apply_corruption(&apply_drift(imu, &cfg)?, &cfg)
}

fn window_metrics(pred: &MotionSequence, gt_pos: &[Vec<Vec3>], skel: &Skeleton) -> Result<Metrics> {
    let pos = fk_positions(pred, skel);
    Ok(Metrics { mpjpe: mpjpe_positions(&pos, gt_pos)?, jitter: jitter(&pos, pred.fps)?, frames: pos.len() })
}

fn check_models(imu: &ImuTokenizer, motion: &MotionTokenizer, baseline: &BaselinePoser) -> Result<()> {
    if imu.motion.digest() != motion.digest() {
        return Err(Error::CheckpointMismatch("IMU tokenizer was trained against a different motion model".into()));
    }
    let (a, b) = (&imu.config, &baseline.config);
    if a.window != b.window || a.chunk_len != b.chunk_len || a.fps != b.fps {
        return Err(Error::CheckpointMismatch(format!(
            "window/chunk/fps differ: {}/{}/{} vs {}/{}/{}",
            a.window, a.chunk_len, a.fps, b.window, b.chunk_len, b.fps
        )));
    }
    Ok(())
}

/// Evaluates both methods with `sensors` corrupted. Every clip is cut into
/// non-overlapping windows of the training length, each re-anchored like the
/// training crops; both methods see byte-identical corrupted inputs.
pub fn evaluate_case(
    imu: &ImuTokenizer,
    baseline: &BaselinePoser,
    corpus: &[BenchSequence],
    sensors: &[usize],
    bench: &BenchConfig,
    case_seed: u64,
) -> Result<CaseResult> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let skel = Skeleton::standard();
    let t = imu.config.window;
    let per_seq = crate::par::map_range(corpus.len(), |i| -> Result<(Vec<Metrics>, Vec<Metrics>)> {
        let seq = &corpus[i];
        let noisy = corrupt(&seq.imu, sensors, bench, mix(case_seed, &[i as u64]))?;
        let for_tok = normalize_acceleration(&noisy, &imu.norm);
        let for_base = normalize_acceleration(&noisy, &baseline.norm);
        let (mut tok, mut base) = (Vec::new(), Vec::new());
        let mut s = 0;
        while s + t <= seq.motion.len() {
            let gt = motion_from_channels(&motion_window(&seq.motion, s, t)?, seq.motion.fps)?;
            let gt_pos = fk_positions(&gt, &skel);
            tok.push(window_metrics(&imu.reconstruct(&for_tok.slice(s, s + t))?, &gt_pos, &skel)?);
            base.push(window_metrics(&baseline.predict(&for_base.slice(s, s + t))?, &gt_pos, &skel)?);
            s += t;
        }
        Ok((tok, base))
    });
    let (mut tok, mut base) = (Vec::new(), Vec::new());
    for r in per_seq {
        let (a, b) = r?;
        tok.extend(a);
        base.extend(b);
    }
    if tok.is_empty() {
        return Err(Error::TooShort { needed: t, got: corpus.iter().map(|s| s.motion.len()).max().unwrap_or(0) });
    }
    Ok(CaseResult { tokenized: Metrics::merge(&tok), baseline: Metrics::merge(&base) })
}

/// Sensor sets and case seeds evaluated for one noise level: no sensors for
/// level 0, each single sensor for level 1, and `combinations` distinct
/// seeded random sets otherwise.
pub fn level_cases(level: usize, bench: &BenchConfig) -> Result<Vec<(Vec<usize>, u64)>> {
    if level > SENSOR_COUNT {
        return Err(Error::InvalidArgument(format!("noise level {level} exceeds {SENSOR_COUNT} sensors")));
    }
    let seed = |c: usize| mix(bench.seed, &[level as u64, c as u64]);
    match level {
        0 => Ok(vec![(Vec::new(), seed(0))]),
        1 => Ok((0..SENSOR_COUNT).map(|s| (vec![s], seed(s))).collect()),
        _ => {
            let total = binomial(SENSOR_COUNT, level);
            let want = bench.combinations.min(total);
            let mut rng = ChaCha8Rng::seed_from_u64(seed(usize::MAX));
            let mut sets: Vec<Vec<usize>> = Vec::new();
            while sets.len() < want {
                let mut all: Vec<usize> = (0..SENSOR_COUNT).collect();
                for i in 0..level {
                    let j = rng.random_range(i..SENSOR_COUNT);
                    all.swap(i, j);
                }
                let mut pick = all[..level].to_vec();
                pick.sort_unstable();
                if !sets.contains(&pick) {
                    sets.push(pick);
                }
            }
            Ok(sets.into_iter().enumerate().map(|(c, s)| (s, seed(c))).collect())
        }
    }
}

/// Mean computed as the first value plus the mean offset from it, so equal
/// values average to themselves exactly.
fn shifted_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return 0.0 };
    let n = values.clone().count() as f64;
    first + values.map(|v| v - first).sum::<f64>() / n
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Per-level MPJPE and jitter of both methods, each level averaged over its
/// cases. Level 0 is always included as the clean reference.
pub fn run_noise_benchmark(
    imu: &ImuTokenizer,
    motion: &MotionTokenizer,
    baseline: &BaselinePoser,
    corpus: &[BenchSequence],
    bench: &BenchConfig,
) -> Result<MetricReport> {
    check_models(imu, motion, baseline)?;
    bench.gaussian.validate("gaussian")?;
    bench.drift.validate("drift")?;
    let mut levels = vec![0];
    levels.extend(bench.levels.iter().copied().filter(|&l| l != 0));
    let mut report = MetricReport {
        rows: Vec::new(),
        sequence_ids: corpus.iter().map(|s| s.id.clone()).collect(),
    };
    let mut tok_rows = Vec::new();
    let mut base_rows = Vec::new();
    for level in levels {
        let cases = level_cases(level, bench)?;
        let results: Vec<CaseResult> = cases
            .iter()
            .map(|(sensors, seed)| evaluate_case(imu, baseline, corpus, sensors, bench, *seed))
            .collect::<Result<_>>()?;
        let avg = |f: fn(&CaseResult) -> Metrics| {
            let ms: Vec<Metrics> = results.iter().map(f).collect();
            (shifted_mean(ms.iter().map(|m| m.mpjpe)), shifted_mean(ms.iter().map(|m| m.jitter)))
        };
        let (tm, tj) = avg(|r| r.tokenized);
        let (bm, bj) = avg(|r| r.baseline);
        let frames = results[0].tokenized.frames;
        tok_rows.push(MetricRow::new(Method::Tokenized, level, tm, tj, results.len(), frames)?);
        base_rows.push(MetricRow::new(Method::Baseline, level, bm, bj, results.len(), frames)?);
    }
    report.rows.extend(tok_rows);
    report.rows.extend(base_rows);
    Ok(report)
}
