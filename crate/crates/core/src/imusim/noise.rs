use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{InertiaSequence, SENSOR_COUNT};
use crate::error::{Error, Result};
use crate::geom::{exp_so3, Rot6D, RotationMatrix, Vec3};

/// One scale per channel class: orientation (rad), acceleration, gyro.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelSigmas {
    pub orientation: f64,
    pub acceleration: f64,
    pub gyro: f64,
}

impl ChannelSigmas {
    pub const ZERO: ChannelSigmas = ChannelSigmas { orientation: 0.0, acceleration: 0.0, gyro: 0.0 };

    fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        for v in [self.orientation, self.acceleration, self.gyro] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{what} sigma must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sensor imperfection settings. Drift is a per-step random walk;
/// corruption is i.i.d. per-frame noise on the listed sensors, optionally
/// with a dropout that freezes a sensor from a random onset frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Random-walk increment scales, per √step.
    pub drift_sigma: ChannelSigmas,
    pub gaussian_sigma: ChannelSigmas,
    pub drift_sensors: Vec<usize>,
    pub corrupted_sensors: Vec<usize>,
    /// Dropout mode for corrupted sensors.
    pub dropout: [bool; SENSOR_COUNT],
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            drift_sigma: ChannelSigmas { orientation: 0.002, acceleration: 0.01, gyro: 0.001 },
            gaussian_sigma: ChannelSigmas::ZERO,
            drift_sensors: (0..SENSOR_COUNT).collect(),
            corrupted_sensors: Vec::new(),
            dropout: [false; SENSOR_COUNT],
            seed: 0,
        }
    }
}

const DRIFT_STREAM: u64 = 0;
const CORRUPT_STREAM: u64 = 1;

fn sensor_rng(seed: u64, purpose: u64, sensor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 8) | sensor as u64);
    rng
}

fn gauss3(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    Vec3::new(x, y, z) * sigma
}

fn rotate6(r: &RotationMatrix, q: &Rot6D) -> Rot6D {
    let (a, b) = q.columns();
    let (a, b) = (r.rotate(&a), r.rotate(&b));
    Rot6D([a.x, a.y, a.z, b.x, b.y, b.z])
}

impl NoiseConfig {
    /// No drift and no corruption.
    pub fn clean() -> Self {
        Self { drift_sigma: ChannelSigmas::ZERO, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.drift_sigma.validate("drift")?;
        self.gaussian_sigma.validate("gaussian")?;
        for &s in self.drift_sensors.iter().chain(&self.corrupted_sensors) {
            if s >= SENSOR_COUNT {
                return Err(Error::OutOfRange(format!("sensor {s} (valid: 0..{SENSOR_COUNT})")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines. Keys: `drift_orientation`,
    /// `drift_acceleration`, `drift_gyro`, `noise_orientation`,
    /// `noise_acceleration`, `noise_gyro`, `drift_sensors`,
    /// `corrupted_sensors`, `dropout` (comma-separated sensor lists) and
    /// `seed`. Unlisted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key = value: {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || v.parse::<f64>().map_err(|_| Error::Format(format!("bad number for {k}: {v:?}")));
            let list = || -> Result<Vec<usize>> {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| Error::Format(format!("bad sensor index {s:?}"))))
                    .collect()
            };
            match k {
                "drift_orientation" => cfg.drift_sigma.orientation = num()?,
                "drift_acceleration" => cfg.drift_sigma.acceleration = num()?,
                "drift_gyro" => cfg.drift_sigma.gyro = num()?,
                "noise_orientation" => cfg.gaussian_sigma.orientation = num()?,
                "noise_acceleration" => cfg.gaussian_sigma.acceleration = num()?,
                "noise_gyro" => cfg.gaussian_sigma.gyro = num()?,
                "drift_sensors" => cfg.drift_sensors = list()?,
                "corrupted_sensors" => cfg.corrupted_sensors = list()?,
                "dropout" => {
                    cfg.dropout = [false; SENSOR_COUNT];
                    for s in list()? {
                        *cfg.dropout.get_mut(s).ok_or_else(|| Error::OutOfRange(format!("sensor {s}")))? = true;
                    }
                }
                "seed" => cfg.seed = v.parse().map_err(|_| Error::Format(format!("bad seed {v:?}")))?,
                _ => return Err(Error::Format(format!("unknown noise key {k:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn unique(sensors: &[usize]) -> Vec<usize> {
    let mut s = sensors.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// Accumulated random-walk drift on the configured sensors. The walk starts
/// at zero on frame 0, so the offset at frame `t` has variance `t·σ²`.
/// Orientation drift composes `D_t = D_{t−1}·exp(δ_t)` on the world side.
pub fn apply_drift(seq: &InertiaSequence, cfg: &NoiseConfig) -> Result<InertiaSequence> {
    cfg.validate()?;
    let mut out = seq.clone();
    let sig = cfg.drift_sigma;
    if sig.is_zero() {
        return Ok(out);
    }
    for s in unique(&cfg.drift_sensors) {
        let mut rng = sensor_rng(cfg.seed, DRIFT_STREAM, s);
        let mut d = RotationMatrix::identity();
        let (mut ba, mut bw) = (Vec3::zeros(), Vec3::zeros());
        for (t, f) in out.frames.iter_mut().enumerate() {
            if t > 0 {
                d = d.compose(&exp_so3(&gauss3(&mut rng, sig.orientation)));
                ba += gauss3(&mut rng, sig.acceleration);
                bw += gauss3(&mut rng, sig.gyro);
            }
            if sig.orientation > 0.0 {
                f.q[s] = rotate6(&d, &f.q[s]);
            }
            f.a[s] += ba;
            f.omega[s] += bw;
        }
    }
    Ok(out)
}

/// Per-frame corruption of the listed sensors only: a random world-side
/// rotation on `q` and additive Gaussian noise on `a` and `omega`. A sensor
/// with dropout enabled holds its last reading before a random onset frame.
/// Each sensor draws from its own stream, so corrupting disjoint sets in
/// either order gives identical results.
pub fn apply_corruption(seq: &InertiaSequence, cfg: &NoiseConfig) -> Result<InertiaSequence> {
    cfg.validate()?;
    let mut out = seq.clone();
    let n = out.len();
    if n == 0 {
        return Ok(out);
    }
    let sig = cfg.gaussian_sigma;
    for s in unique(&cfg.corrupted_sensors) {
        let mut rng = sensor_rng(cfg.seed, CORRUPT_STREAM, s);
        if cfg.dropout[s] {
            let onset = rng.random_range(0..n);
            let src = onset.saturating_sub(1);
            let (q, a, w) = (out.frames[src].q[s], out.frames[src].a[s], out.frames[src].omega[s]);
            for f in &mut out.frames[onset..] {
                f.q[s] = q;
                f.a[s] = a;
                f.omega[s] = w;
            }
        }
        for f in &mut out.frames {
            let rot = gauss3(&mut rng, sig.orientation);
            let da = gauss3(&mut rng, sig.acceleration);
            let dw = gauss3(&mut rng, sig.gyro);
            if sig.orientation > 0.0 {
                f.q[s] = rotate6(&exp_so3(&rot), &f.q[s]);
            }
            f.a[s] += da;
            f.omega[s] += dw;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{geodesic_distance, rot6d_to_matrix};
    use crate::imusim::{synthesize_imu, InertiaFrame, SensorPlacement, GRAVITY};
    use crate::motion::{generate_synthetic_motion, MotionStyle, Skeleton};

    fn sample_seq() -> InertiaSequence {
        let tr = generate_synthetic_motion(4, 2.0, 60.0, MotionStyle::Walk).unwrap();
        synthesize_imu(&tr, &Skeleton::standard(), &SensorPlacement::standard(), &GRAVITY).unwrap()
    }

    fn flat_sensor(seq: &InertiaSequence, s: usize) -> Vec<u64> {
        seq.frames
            .iter()
            .flat_map(|f| {
                let mut v = f.q[s].0.to_vec();
                v.extend(f.a[s].iter());
                v.extend(f.omega[s].iter());
                v
            })
            .map(f64::to_bits)
            .collect()
    }

    #[test]
    fn zero_drift_is_identity() {
        let seq = sample_seq();
        let cfg = NoiseConfig { drift_sigma: ChannelSigmas::ZERO, ..NoiseConfig::default() };
        assert_eq!(apply_drift(&seq, &cfg).unwrap(), seq);
    }

    #[test]
    fn empty_corruption_is_identity() {
        let seq = sample_seq();
        let cfg = NoiseConfig {
            gaussian_sigma: ChannelSigmas { orientation: 0.1, acceleration: 1.0, gyro: 1.0 },
            ..NoiseConfig::clean()
        };
        assert_eq!(apply_corruption(&seq, &cfg).unwrap(), seq);
    }

    #[test]
    fn corruption_is_local() {
        let seq = sample_seq();
        let cfg = NoiseConfig {
            gaussian_sigma: ChannelSigmas { orientation: 0.1, acceleration: 1.0, gyro: 1.0 },
            corrupted_sensors: vec![2],
            dropout: [false, false, true, false, false, false],
            ..NoiseConfig::clean()
        };
        let out = apply_corruption(&seq, &cfg).unwrap();
        for s in [0, 1, 3, 4, 5] {
            assert_eq!(flat_sensor(&out, s), flat_sensor(&seq, s));
        }
        assert_ne!(flat_sensor(&out, 2), flat_sensor(&seq, 2));
        // corrupted orientations stay proper rotations
        for f in &out.frames {
            assert!(rot6d_to_matrix(&f.q[2]).is_ok());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let seq = sample_seq();
        let bad = NoiseConfig { corrupted_sensors: vec![6], ..NoiseConfig::clean() };
        assert!(matches!(apply_corruption(&seq, &bad), Err(Error::OutOfRange(_))));
        let neg = NoiseConfig {
            gaussian_sigma: ChannelSigmas { orientation: -1.0, ..ChannelSigmas::ZERO },
            ..NoiseConfig::clean()
        };
        assert!(apply_corruption(&seq, &neg).is_err());
    }

    #[test]
    fn deterministic_and_commuting() {
        let seq = sample_seq();
        let sig = ChannelSigmas { orientation: 0.05, acceleration: 0.5, gyro: 0.3 };
        let a = NoiseConfig { gaussian_sigma: sig, corrupted_sensors: vec![0, 3], seed: 11, ..NoiseConfig::clean() };
        let b = NoiseConfig {
            gaussian_sigma: sig,
            corrupted_sensors: vec![1, 5],
            dropout: [false, true, false, false, false, false],
            seed: 12,
            ..NoiseConfig::clean()
        };
        let ab = apply_corruption(&apply_corruption(&seq, &a).unwrap(), &b).unwrap();
        let ba = apply_corruption(&apply_corruption(&seq, &b).unwrap(), &a).unwrap();
        let bits = |s: &InertiaSequence| s.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ab), bits(&ba));
        assert_eq!(bits(&apply_corruption(&seq, &a).unwrap()), bits(&apply_corruption(&seq, &a).unwrap()));
        let d = NoiseConfig::default();
        assert_eq!(bits(&apply_drift(&seq, &d).unwrap()), bits(&apply_drift(&seq, &d).unwrap()));
    }

    #[test]
    fn dropout_holds_readings() {
        let seq = sample_seq();
        let cfg = NoiseConfig {
            corrupted_sensors: vec![4],
            dropout: [false, false, false, false, true, false],
            seed: 3,
            ..NoiseConfig::clean()
        };
        let out = apply_corruption(&seq, &cfg).unwrap();
        let last = out.frames.last().unwrap();
        let onset = out.frames.iter().position(|f| f.a[4] == last.a[4]).unwrap();
        assert!(out.frames[onset..].iter().all(|f| f.a[4] == last.a[4] && f.q[4] == last.q[4]));
        assert_eq!(out.frames[..onset], seq.frames[..onset]);
    }

    fn zeros(n: usize) -> InertiaSequence {
        InertiaSequence { fps: 60.0, frames: vec![InertiaFrame::default(); n] }
    }

    #[test]
    fn gaussian_corruption_std() {
        let n = 100_000;
        let seq = zeros(n);
        let cfg = NoiseConfig {
            gaussian_sigma: ChannelSigmas { acceleration: 1.0, ..ChannelSigmas::ZERO },
            corrupted_sensors: vec![3],
            seed: 5,
            ..NoiseConfig::clean()
        };
        let out = apply_corruption(&seq, &cfg).unwrap();
        for k in 0..3 {
            let xs: Vec<f64> = out.frames.iter().map(|f| f.a[3][k]).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!((0.97..=1.03).contains(&sd), "{sd}");
        }
    }

    #[test]
    fn acceleration_drift_variance_grows_linearly() {
        let sigma = 0.01;
        let steps = 20;
        let seeds = 10_000;
        let seq = zeros(steps + 1);
        let cfg = NoiseConfig {
            drift_sigma: ChannelSigmas { acceleration: sigma, ..ChannelSigmas::ZERO },
            drift_sensors: vec![0],
            ..NoiseConfig::clean()
        };
        let mut sums = vec![0.0; steps + 1];
        let mut sq = vec![0.0; steps + 1];
        for seed in 0..seeds {
            let out = apply_drift(&seq, &NoiseConfig { seed, ..cfg.clone() }).unwrap();
            for t in 0..=steps {
                let x = out.frames[t].a[0].x;
                sums[t] += x;
                sq[t] += x * x;
            }
        }
        assert_eq!(sq[0], 0.0);
        for t in [1, 5, 10, 20] {
            let n = seeds as f64;
            let var = (sq[t] - sums[t] * sums[t] / n) / (n - 1.0);
            let want = t as f64 * sigma * sigma;
            assert!(((var - want) / want).abs() < 0.05, "t={t}: {var} vs {want}");
        }
    }

    #[test]
    fn orientation_drift_first_step_matches_monte_carlo() {
        let sigma = 0.002;
        let seq = InertiaSequence { fps: 60.0, frames: vec![InertiaFrame::default(); 2] };
        let cfg = NoiseConfig {
            drift_sigma: ChannelSigmas { orientation: sigma, ..ChannelSigmas::ZERO },
            drift_sensors: vec![1],
            ..NoiseConfig::clean()
        };
        let n = 10_000;
        let mut mean = 0.0;
        for seed in 0..n {
            let out = apply_drift(&seq, &NoiseConfig { seed, ..cfg.clone() }).unwrap();
            let a = rot6d_to_matrix(&seq.frames[1].q[1]).unwrap();
            let b = rot6d_to_matrix(&out.frames[1].q[1]).unwrap();
            mean += geodesic_distance(&a, &b);
        }
        mean /= n as f64;
        // reference: norms of independent isotropic Gaussian increments
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let reference = (0..200_000).map(|_| gauss3(&mut rng, sigma).norm()).sum::<f64>() / 200_000.0;
        assert!(((mean - reference) / reference).abs() < 0.03, "{mean} vs {reference}");
    }

    #[test]
    fn parse_profile() {
        let cfg = NoiseConfig::parse("noise_acceleration = 0.5\ncorrupted_sensors = 1, 4\ndropout = 4\nseed = 9\n").unwrap();
        assert_eq!(cfg.gaussian_sigma.acceleration, 0.5);
        assert_eq!(cfg.corrupted_sensors, vec![1, 4]);
        assert!(cfg.dropout[4] && !cfg.dropout[1]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.drift_sigma, NoiseConfig::default().drift_sigma);
        assert!(NoiseConfig::parse("bogus = 1").is_err());
        assert!(NoiseConfig::parse("corrupted_sensors = 9").is_err());
    }
}
