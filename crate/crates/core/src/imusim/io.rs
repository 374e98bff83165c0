use std::io::{Read, Write};

use super::{InertiaSequence, NormStats, ACCEL_DIM, INERTIA_DIM, SENSOR_COUNT};
use crate::error::{Error, Result};
use crate::wire;

pub const IMU_MAGIC: &[u8; 4] = b"MJI1";
pub const NORM_MAGIC: &[u8; 4] = b"MJN1";

/// Writes `MJI1`: magic, fps (f32), frame count (u32), sensor count (u32),
/// then little-endian f32 frames of width 72.
pub fn write_imu<W: Write>(mut w: W, seq: &InertiaSequence) -> Result<()> {
    w.write_all(IMU_MAGIC)?;
    w.write_all(&(seq.fps as f32).to_le_bytes())?;
    w.write_all(&wire::u32_len(seq.len())?.to_le_bytes())?;
    w.write_all(&(SENSOR_COUNT as u32).to_le_bytes())?;
    wire::write_f32s(&mut w, &seq.to_flat())
}

pub fn read_imu<R: Read>(mut r: R) -> Result<InertiaSequence> {
    wire::expect_magic(&mut r, IMU_MAGIC)?;
    let fps = wire::read_f32(&mut r)? as f64;
    let frames = wire::read_u32(&mut r)? as usize;
    let sensors = wire::read_u32(&mut r)? as usize;
    if sensors != SENSOR_COUNT {
        return Err(Error::Format(format!("expected {SENSOR_COUNT} sensors, file has {sensors}")));
    }
    if !(fps > 0.0) {
        return Err(Error::Format(format!("invalid fps {fps}")));
    }
    let data = wire::read_f32s(&mut r, frames * INERTIA_DIM)?;
    InertiaSequence::from_flat(fps, &data)
}

/// Writes `MJN1`: magic, dimension count (u32), then f64 means and stds.
pub fn write_norm_stats<W: Write>(mut w: W, stats: &NormStats) -> Result<()> {
    w.write_all(NORM_MAGIC)?;
    w.write_all(&(ACCEL_DIM as u32).to_le_bytes())?;
    wire::write_f64s(&mut w, &stats.mean)?;
    wire::write_f64s(&mut w, &stats.std)
}

pub fn read_norm_stats<R: Read>(mut r: R) -> Result<NormStats> {
    wire::expect_magic(&mut r, NORM_MAGIC)?;
    let dims = wire::read_u32(&mut r)? as usize;
    if dims != ACCEL_DIM {
        return Err(Error::Format(format!("expected {ACCEL_DIM} dimensions, file has {dims}")));
    }
    let mean = wire::read_f64s(&mut r, ACCEL_DIM)?;
    let std = wire::read_f64s(&mut r, ACCEL_DIM)?;
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Format("non-positive standard deviation".into()));
    }
    Ok(NormStats { mean: mean.try_into().unwrap(), std: std.try_into().unwrap() })
}
