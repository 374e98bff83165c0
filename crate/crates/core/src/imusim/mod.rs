//! Virtual IMU synthesis from pose tracks, sensor imperfection models and
//! acceleration normalization.

mod io;
mod noise;

pub use io::{read_imu, read_norm_stats, write_imu, write_norm_stats, IMU_MAGIC, NORM_MAGIC};
pub use noise::{apply_corruption, apply_drift, ChannelSigmas, NoiseConfig};

use crate::error::{Error, Result};
use crate::geom::{self, Rot6D, RotationMatrix, Vec3};
use crate::motion::{joint, rotation_rates, RawPoseTrack, Skeleton};

pub const SENSOR_COUNT: usize = 6;

/// Channel offsets inside a flattened inertia frame (sensor-major blocks).
pub mod layout {
    use super::SENSOR_COUNT;

    pub const Q: usize = 0;
    pub const A: usize = 6 * SENSOR_COUNT;
    pub const OMEGA: usize = A + 3 * SENSOR_COUNT;
    pub const WIDTH: usize = OMEGA + 3 * SENSOR_COUNT;
}

/// Width of a flattened inertia frame.
pub const INERTIA_DIM: usize = layout::WIDTH;
/// Number of acceleration channels.
pub const ACCEL_DIM: usize = 3 * SENSOR_COUNT;

/// Standard gravity in world axes (y up). Free acceleration never contains it.
pub const GRAVITY: Vec3 = Vec3::new(0.0, -9.81, 0.0);

/// One virtual sensor rigidly attached to a joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    pub joint: usize,
    /// Sensor frame relative to the bone frame.
    pub mount: RotationMatrix,
    /// Sensor origin in the bone frame (m).
    pub lever: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorPlacement {
    sensors: [Sensor; SENSOR_COUNT],
}

impl SensorPlacement {
    pub fn new(sensors: [Sensor; SENSOR_COUNT]) -> Result<Self> {
        for (i, s) in sensors.iter().enumerate() {
            if sensors[..i].iter().any(|o| o.joint == s.joint) {
                return Err(Error::InvalidArgument(format!("joint {} carries two sensors", s.joint)));
            }
            if !s.lever.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("sensor lever must be finite".into()));
            }
        }
        Ok(Self { sensors })
    }

    /// Pelvis, head, left wrist, right wrist, left knee, right knee.
    pub fn standard() -> Self {
        let s = |j, mount, lever: [f64; 3]| Sensor { joint: j, mount, lever: Vec3::from(lever) };
        Self {
            sensors: [
                s(joint::PELVIS, RotationMatrix::identity(), [0.0, 0.0, -0.10]),
                s(joint::HEAD, RotationMatrix::rot_x(0.2), [0.0, 0.08, 0.0]),
                s(joint::L_WRIST, RotationMatrix::rot_z(std::f64::consts::FRAC_PI_2), [0.0, -0.02, 0.0]),
                s(joint::R_WRIST, RotationMatrix::rot_z(-std::f64::consts::FRAC_PI_2), [0.0, -0.02, 0.0]),
                s(joint::L_KNEE, RotationMatrix::rot_y(0.1), [0.0, -0.12, 0.05]),
                s(joint::R_KNEE, RotationMatrix::rot_y(-0.1), [0.0, -0.12, 0.05]),
            ],
        }
    }

    pub fn sensors(&self) -> &[Sensor; SENSOR_COUNT] {
        &self.sensors
    }

    /// Parses six lines of `joint rx ry rz lx ly lz` (mount as a rotation
    /// vector in radians, lever in metres). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("placement line needs 7 fields: {line:?}")));
            }
            let joint: usize = f[0].parse().map_err(|_| Error::Format(format!("bad joint index {:?}", f[0])))?;
            if joint >= crate::motion::JOINT_COUNT {
                return Err(Error::OutOfRange(format!("joint {joint}")));
            }
            let v: Vec<f64> = f[1..]
                .iter()
                .map(|x| x.parse::<f64>().map_err(|_| Error::Format(format!("bad number {x:?}"))))
                .collect::<Result<_>>()?;
            out.push(Sensor {
                joint,
                mount: geom::exp_so3(&Vec3::new(v[0], v[1], v[2])),
                lever: Vec3::new(v[3], v[4], v[5]),
            });
        }
        let sensors: [Sensor; SENSOR_COUNT] = out
            .try_into()
            .map_err(|v: Vec<Sensor>| Error::Format(format!("expected {SENSOR_COUNT} sensors, got {}", v.len())))?;
        Self::new(sensors)
    }
}

/// Readings of all sensors at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaFrame {
    pub q: [Rot6D; SENSOR_COUNT],
    pub a: [Vec3; SENSOR_COUNT],
    pub omega: [Vec3; SENSOR_COUNT],
}

impl Default for InertiaFrame {
    fn default() -> Self {
        Self {
            q: [Rot6D::IDENTITY; SENSOR_COUNT],
            a: [Vec3::zeros(); SENSOR_COUNT],
            omega: [Vec3::zeros(); SENSOR_COUNT],
        }
    }
}

impl InertiaFrame {
    pub fn flatten(&self) -> [f64; INERTIA_DIM] {
        let mut out = [0.0; INERTIA_DIM];
        for s in 0..SENSOR_COUNT {
            out[layout::Q + 6 * s..layout::Q + 6 * s + 6].copy_from_slice(&self.q[s].0);
            out[layout::A + 3 * s..layout::A + 3 * s + 3].copy_from_slice(self.a[s].as_slice());
            out[layout::OMEGA + 3 * s..layout::OMEGA + 3 * s + 3].copy_from_slice(self.omega[s].as_slice());
        }
        out
    }

    pub fn unflatten(x: &[f64]) -> Result<Self> {
        if x.len() != INERTIA_DIM {
            return Err(Error::LengthMismatch { left: x.len(), right: INERTIA_DIM });
        }
        let v3 = |at: usize| Vec3::new(x[at], x[at + 1], x[at + 2]);
        Ok(Self {
            q: std::array::from_fn(|s| {
                let mut q = [0.0; 6];
                q.copy_from_slice(&x[layout::Q + 6 * s..layout::Q + 6 * s + 6]);
                Rot6D(q)
            }),
            a: std::array::from_fn(|s| v3(layout::A + 3 * s)),
            omega: std::array::from_fn(|s| v3(layout::OMEGA + 3 * s)),
        })
    }
}

/// A clip of stacked sensor readings.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaSequence {
    pub fps: f64,
    pub frames: Vec<InertiaFrame>,
}

impl InertiaSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row-major `[frames, 72]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * INERTIA_DIM);
        for f in &self.frames {
            out.extend_from_slice(&f.flatten());
        }
        out
    }

    pub fn from_flat(fps: f64, data: &[f64]) -> Result<Self> {
        if data.len() % INERTIA_DIM != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a whole number of {INERTIA_DIM}-wide frames",
                data.len()
            )));
        }
        let frames = data.chunks_exact(INERTIA_DIM).map(InertiaFrame::unflatten).collect::<Result<_>>()?;
        Ok(Self { fps, frames })
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self { fps: self.fps, frames: self.frames[start..end].to_vec() }
    }
}

fn second_diff(xs: &[Vec3], dt: f64) -> Vec<Vec3> {
    let n = xs.len();
    let h2 = dt * dt;
    (0..n)
        .map(|t| {
            if t == 0 {
                (2.0 * xs[0] - 5.0 * xs[1] + 4.0 * xs[2] - xs[3]) / h2
            } else if t == n - 1 {
                (2.0 * xs[n - 1] - 5.0 * xs[n - 2] + 4.0 * xs[n - 3] - xs[n - 4]) / h2
            } else {
                (xs[t + 1] - 2.0 * xs[t] + xs[t - 1]) / h2
            }
        })
        .collect()
}

/// Simulates six body-worn sensors. Orientation is the bone's global
/// rotation times the mount; free acceleration is the second difference of
/// the sensor's world position in world axes (no gravity term: `gravity`
/// names the convention and must be finite); angular velocity is body-frame.
pub fn synthesize_imu(
    track: &RawPoseTrack,
    skel: &Skeleton,
    place: &SensorPlacement,
    gravity: &Vec3,
) -> Result<InertiaSequence> {
    let n = track.len();
    if n < 5 {
        return Err(Error::TooShort { needed: 5, got: n });
    }
    if !gravity.iter().all(|g| g.is_finite()) {
        return Err(Error::InvalidArgument("gravity must be finite".into()));
    }
    if place.sensors.iter().any(|s| s.joint >= skel.joint_count()) {
        return Err(Error::OutOfRange("sensor joint outside the skeleton".into()));
    }
    let dt = 1.0 / track.fps();
    let states = crate::par::map(track.frames(), |f| {
        skel.forward_kinematics_full(&f.root_translation, &f.root_rotation, &f.local)
    });
    let mut frames = vec![InertiaFrame::default(); n];
    for (s, sensor) in place.sensors.iter().enumerate() {
        let rots: Vec<RotationMatrix> =
            states.iter().map(|st| st.rotations[sensor.joint].compose(&sensor.mount)).collect();
        let pos: Vec<Vec3> = states
            .iter()
            .map(|st| st.positions[sensor.joint] + st.rotations[sensor.joint].rotate(&sensor.lever))
            .collect();
        let acc = second_diff(&pos, dt);
        let omega = rotation_rates(&rots, dt);
        for t in 0..n {
            frames[t].q[s] = geom::matrix_to_rot6d(&rots[t]);
            frames[t].a[s] = acc[t];
            frames[t].omega[s] = omega[t];
        }
    }
    Ok(InertiaSequence { fps: track.fps(), frames })
}

/// Per-channel mean and standard deviation of the acceleration block.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; ACCEL_DIM],
    pub std: [f64; ACCEL_DIM],
}

/// Smallest standard deviation kept by [`fit_norm_stats`].
pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn identity() -> Self {
        Self { mean: [0.0; ACCEL_DIM], std: [1.0; ACCEL_DIM] }
    }
}

/// Fits acceleration statistics over every frame of every sequence
/// (population variance, std floored at [`STD_FLOOR`]).
pub fn fit_norm_stats(corpus: &[InertiaSequence]) -> Result<NormStats> {
    let count: usize = corpus.iter().map(|s| s.len()).sum();
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    let accel = |f: &InertiaFrame, d: usize| f.a[d / 3][d % 3];
    let mut mean = [0.0; ACCEL_DIM];
    for seq in corpus {
        for f in &seq.frames {
            for (d, m) in mean.iter_mut().enumerate() {
                *m += accel(f, d);
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = [0.0; ACCEL_DIM];
    for seq in corpus {
        for f in &seq.frames {
            for (d, v) in var.iter_mut().enumerate() {
                *v += (accel(f, d) - mean[d]).powi(2);
            }
        }
    }
    let std = var.map(|v| (v / count as f64).sqrt().max(STD_FLOOR));
    Ok(NormStats { mean, std })
}

/// Maps acceleration channels to `(a − mean) / std`; other channels unchanged.
pub fn normalize_acceleration(seq: &InertiaSequence, stats: &NormStats) -> InertiaSequence {
    map_accel(seq, |d, a| (a - stats.mean[d]) / stats.std[d])
}

/// Inverse of [`normalize_acceleration`].
pub fn denormalize_acceleration(seq: &InertiaSequence, stats: &NormStats) -> InertiaSequence {
    map_accel(seq, |d, a| a * stats.std[d] + stats.mean[d])
}

fn map_accel(seq: &InertiaSequence, f: impl Fn(usize, f64) -> f64) -> InertiaSequence {
    let mut out = seq.clone();
    for fr in &mut out.frames {
        for s in 0..SENSOR_COUNT {
            for k in 0..3 {
                fr.a[s][k] = f(3 * s + k, fr.a[s][k]);
            }
        }
    }
    out
}
