use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::skeleton::{joint, Skeleton, JOINT_COUNT};
use super::{PoseFrame, RawPoseTrack};
use crate::error::{Error, Result};
use crate::geom::{RotationMatrix, Vec3};

/// Procedural motion families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionStyle {
    Walk,
    Squat,
    ArmRaise,
    IdleSway,
}

impl MotionStyle {
    pub const ALL: [MotionStyle; 4] = [Self::Walk, Self::Squat, Self::ArmRaise, Self::IdleSway];

    pub fn name(self) -> &'static str {
        match self {
            Self::Walk => "walk",
            Self::Squat => "squat",
            Self::ArmRaise => "arm_raise",
            Self::IdleSway => "idle_sway",
        }
    }
}

impl fmt::Display for MotionStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown motion style {s:?}")))
    }
}

/// Randomized per-clip parameters shared by all styles.
struct Params {
    style: MotionStyle,
    heading: f64,
    scale: f64,
    freq: f64,
    phase: f64,
    frontal: bool,
    aux_freq: [f64; 4],
    aux_phase: [f64; 4],
}

impl Params {
    fn draw(style: MotionStyle, rng: &mut ChaCha8Rng) -> Self {
        let freq = match style {
            MotionStyle::Walk => rng.random_range(0.8..1.1),
            MotionStyle::Squat => rng.random_range(0.25..0.4),
            MotionStyle::ArmRaise => rng.random_range(0.2..0.35),
            MotionStyle::IdleSway => rng.random_range(0.2..0.4),
        };
        Self {
            style,
            heading: rng.random_range(-0.5..0.5),
            scale: rng.random_range(0.85..1.15),
            freq,
            phase: rng.random_range(0.0..TAU),
            frontal: rng.random_bool(0.5),
            aux_freq: std::array::from_fn(|_| rng.random_range(0.15..0.5)),
            aux_phase: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
        }
    }

    fn left_stance(&self, t: f64) -> bool {
        (TAU * self.freq * t + self.phase).cos() <= 0.0
    }

    fn aux(&self, k: usize, t: f64) -> f64 {
        (TAU * self.aux_freq[k] * t + self.aux_phase[k]).sin()
    }

    /// Root orientation and local rotations at time `t`.
    fn pose(&self, t: f64) -> (RotationMatrix, Vec<RotationMatrix>) {
        let mut local = vec![RotationMatrix::identity(); JOINT_COUNT - 1];
        let mut set = |j: usize, r: RotationMatrix| local[j - 1] = r;
        let s = self.scale;
        let psi = TAU * self.freq * t + self.phase;
        let mut yaw = self.heading;
        match self.style {
            MotionStyle::Walk => {
                let (ah, ak, aa) = (0.35 * s, 0.9 * s, 0.3 * s);
                for (side, off) in [(0usize, 0.0), (1, PI)] {
                    let ph = psi + off;
                    let hip = ah * ph.sin();
                    let knee = ak * ph.cos().max(0.0).powi(2);
                    let (h, k, a) = if side == 0 {
                        (joint::L_HIP, joint::L_KNEE, joint::L_ANKLE)
                    } else {
                        (joint::R_HIP, joint::R_KNEE, joint::R_ANKLE)
                    };
                    // foot stays level: ankle cancels hip and knee pitch
                    set(h, RotationMatrix::rot_x(-hip));
                    set(k, RotationMatrix::rot_x(knee));
                    set(a, RotationMatrix::rot_x(hip - knee));
                    let (sh, el) = if side == 0 {
                        (joint::L_SHOULDER, joint::L_ELBOW)
                    } else {
                        (joint::R_SHOULDER, joint::R_ELBOW)
                    };
                    set(sh, RotationMatrix::rot_x(aa * ph.sin()));
                    set(el, RotationMatrix::rot_x(-0.25 - 0.1 * (1.0 - ph.sin())));
                }
                set(joint::SPINE2, RotationMatrix::rot_y(0.08 * s * psi.sin()));
                set(joint::NECK, RotationMatrix::rot_x(0.03 * (2.0 * psi).sin()));
                yaw += 0.04 * psi.sin();
            }
            MotionStyle::Squat => {
                let sq = 0.5 * (1.0 - psi.cos());
                let knee = 1.5 * s * sq;
                let hip = 0.85 * knee;
                for (h, k, a) in [
                    (joint::L_HIP, joint::L_KNEE, joint::L_ANKLE),
                    (joint::R_HIP, joint::R_KNEE, joint::R_ANKLE),
                ] {
                    set(h, RotationMatrix::rot_x(-hip));
                    set(k, RotationMatrix::rot_x(knee));
                    set(a, RotationMatrix::rot_x(hip - knee));
                }
                set(joint::SPINE1, RotationMatrix::rot_x(0.35 * sq));
                set(joint::NECK, RotationMatrix::rot_x(-0.2 * sq));
                for sh in [joint::L_SHOULDER, joint::R_SHOULDER] {
                    set(sh, RotationMatrix::rot_x(-1.2 * s * sq));
                }
            }
            MotionStyle::ArmRaise => {
                let th = 1.45 * s * 0.5 * (1.0 - psi.cos());
                if self.frontal {
                    set(joint::L_SHOULDER, RotationMatrix::rot_x(-th));
                    set(joint::R_SHOULDER, RotationMatrix::rot_x(-th));
                } else {
                    set(joint::L_SHOULDER, RotationMatrix::rot_z(th));
                    set(joint::R_SHOULDER, RotationMatrix::rot_z(-th));
                }
                let bend = -0.1 - 0.1 * self.aux(0, t);
                set(joint::L_ELBOW, RotationMatrix::rot_x(bend));
                set(joint::R_ELBOW, RotationMatrix::rot_x(bend));
                set(joint::NECK, RotationMatrix::rot_x(0.05 * self.aux(1, t)));
            }
            MotionStyle::IdleSway => {
                let sway = 0.04 * s * psi.sin();
                // lateral sway at the pelvis with legs kept vertical
                set(joint::L_HIP, RotationMatrix::rot_z(-sway));
                set(joint::R_HIP, RotationMatrix::rot_z(-sway));
                set(joint::SPINE1, RotationMatrix::rot_z(0.05 * s * self.aux(0, t)));
                set(joint::SPINE3, RotationMatrix::rot_x(0.03 * self.aux(1, t)));
                set(joint::NECK, RotationMatrix::rot_y(0.12 * s * self.aux(2, t)));
                set(joint::L_SHOULDER, RotationMatrix::rot_x(0.08 * self.aux(3, t)));
                set(joint::R_SHOULDER, RotationMatrix::rot_x(-0.08 * self.aux(3, t)));
                set(joint::L_ELBOW, RotationMatrix::rot_x(-0.15 - 0.05 * self.aux(1, t)));
                set(joint::R_ELBOW, RotationMatrix::rot_x(-0.15 - 0.05 * self.aux(2, t)));
                let roll = RotationMatrix::rot_z(sway);
                return (RotationMatrix::rot_y(yaw + 0.03 * self.aux(0, t)).compose(&roll), local);
            }
        }
        (RotationMatrix::rot_y(yaw), local)
    }
}

/// Generates a deterministic procedural clip of `round(duration_s · fps)`
/// frames (at least one). Feet never penetrate the ground plane and the
/// supporting foot is kept planted.
pub fn generate_synthetic_motion(seed: u64, duration_s: f64, fps: f64, style: MotionStyle) -> Result<RawPoseTrack> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration_s}")));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = Params::draw(style, &mut rng);
    let skel = Skeleton::standard();
    let feet = skel.foot_joints();
    let n = ((duration_s * fps).round() as usize).max(1);

    let mut frames = Vec::with_capacity(n);
    let mut prev_rel: Option<Vec<Vec3>> = None;
    let mut root_xz = Vec3::zeros();
    for i in 0..n {
        let (root_rotation, local) = params.pose(i as f64 / fps);
        let rel = skel.forward_kinematics_full(&Vec3::zeros(), &root_rotation, &local).positions;
        let lowest = |side: usize| rel[feet[2 * side]].y.min(rel[feet[2 * side + 1]].y);
        // horizontal anchor: the stance ankle when walking (left while its hip
        // extends), otherwise the midpoint of both ankles
        let t = i as f64 / fps;
        let anchor = |pos: &[Vec3]| -> Vec3 {
            if style == MotionStyle::Walk {
                if params.left_stance(t) {
                    pos[joint::L_ANKLE]
                } else {
                    pos[joint::R_ANKLE]
                }
            } else {
                0.5 * (pos[joint::L_ANKLE] + pos[joint::R_ANKLE])
            }
        };
        if let Some(prev) = &prev_rel {
            let d = anchor(&rel) - anchor(prev);
            root_xz.x -= d.x;
            root_xz.z -= d.z;
        }
        let height = -lowest(0).min(lowest(1));
        frames.push(PoseFrame {
            root_translation: Vec3::new(root_xz.x, height, root_xz.z),
            root_rotation,
            local,
        });
        prev_rel = Some(rel);
    }
    RawPoseTrack::new(fps, frames)
}
