//! Jitter-reduced tokenization of inertial motion signals.
//!
//! The crate synthesizes virtual IMU readings from skeletal motion, learns a
//! discrete motion codebook and an IMU codebook aligned to it through
//! distribution matching, and decodes IMU token streams back to motion. A
//! continuous regression baseline and a noise-robustness benchmark compare
//! the two approaches.

pub mod error;
pub mod evalbench;
pub mod geom;
pub mod gradnet;
pub mod imusim;
pub mod motion;
pub mod par;
pub mod stream;
pub mod trainer;
pub mod vqcodec;
mod wire;

pub use error::{Error, Result};
