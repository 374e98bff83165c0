use std::io::{Read, Write};

use super::{MotionSequence, JOINT_COUNT, MOTION_DIM};
use crate::error::{Error, Result};
use crate::wire;

pub const MOTION_MAGIC: &[u8; 4] = b"MJT1";

/// Writes `MJT1`: magic, fps (f32), frame count (u32), joint count (u32),
/// then little-endian f32 frames of width 271.
pub fn write_motion<W: Write>(mut w: W, seq: &MotionSequence) -> Result<()> {
    w.write_all(MOTION_MAGIC)?;
    w.write_all(&(seq.fps as f32).to_le_bytes())?;
    w.write_all(&wire::u32_len(seq.len())?.to_le_bytes())?;
    w.write_all(&(JOINT_COUNT as u32).to_le_bytes())?;
    wire::write_f32s(&mut w, &seq.to_flat())?;
    Ok(())
}

pub fn read_motion<R: Read>(mut r: R) -> Result<MotionSequence> {
    wire::expect_magic(&mut r, MOTION_MAGIC)?;
    let fps = wire::read_f32(&mut r)? as f64;
    let frames = wire::read_u32(&mut r)? as usize;
    let joints = wire::read_u32(&mut r)? as usize;
    if joints != JOINT_COUNT {
        return Err(Error::Format(format!("expected {JOINT_COUNT} joints, file has {joints}")));
    }
    if !(fps > 0.0) {
        return Err(Error::Format(format!("invalid fps {fps}")));
    }
    let data = wire::read_f32s(&mut r, frames * MOTION_DIM)?;
    MotionSequence::from_flat(fps, &data)
}
