//! Skeleton, forward kinematics, the 271-dim per-frame motion state,
//! contact labelling, resampling and procedural motion generation.

mod io;
mod skeleton;
mod synth;

pub use io::{read_motion, write_motion, MOTION_MAGIC};
pub use skeleton::{joint, JointState, Skeleton, JOINT_COUNT, LOCAL_JOINTS, REST_ROOT_HEIGHT};
pub use synth::{generate_synthetic_motion, MotionStyle};

use crate::error::{Error, Result};
use crate::geom::{self, Rot6D, RotationMatrix, Vec3};

/// Contact height threshold (m).
pub const CONTACT_HEIGHT: f64 = 0.05;
/// Contact speed threshold (m/s).
pub const CONTACT_SPEED: f64 = 0.15;

/// Channel offsets inside a flattened motion frame.
pub mod layout {
    use super::LOCAL_JOINTS;

    pub const R: usize = 0;
    pub const R_DOT: usize = 3;
    pub const PHI: usize = 6;
    pub const PHI_DOT: usize = 12;
    pub const J_R: usize = 15;
    pub const J_P: usize = J_R + 6 * LOCAL_JOINTS;
    pub const J_V: usize = J_P + 3 * LOCAL_JOINTS;
    pub const P: usize = J_V + 3 * LOCAL_JOINTS;
    pub const WIDTH: usize = P + 4;

    /// Offset of local joint `j` (1-based skeleton index) inside `j_v`.
    pub const fn j_v(j: usize) -> usize {
        J_V + 3 * (j - 1)
    }

    /// Offset of local joint `j` (1-based skeleton index) inside `j_p`.
    pub const fn j_p(j: usize) -> usize {
        J_P + 3 * (j - 1)
    }
}

/// Width of a flattened motion frame.
pub const MOTION_DIM: usize = layout::WIDTH;

/// One pose: root transform plus one local rotation per non-root joint.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub root_translation: Vec3,
    pub root_rotation: RotationMatrix,
    pub local: Vec<RotationMatrix>,
}

impl PoseFrame {
    pub fn rest(joint_count: usize) -> Self {
        Self {
            root_translation: Vec3::zeros(),
            root_rotation: RotationMatrix::identity(),
            local: vec![RotationMatrix::identity(); joint_count - 1],
        }
    }
}

/// A sampled pose trajectory, before conversion to the motion state.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPoseTrack {
    fps: f64,
    frames: Vec<PoseFrame>,
}

impl RawPoseTrack {
    pub fn new(fps: f64, frames: Vec<PoseFrame>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        if let Some(first) = frames.first() {
            let n = first.local.len();
            if frames.iter().any(|f| f.local.len() != n) {
                return Err(Error::ShapeMismatch("frames disagree on joint count".into()));
            }
        }
        Ok(Self { fps, frames })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[PoseFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Copy with every root translation shifted by `offset`.
    pub fn translated(&self, offset: &Vec3) -> Self {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.root_translation += offset;
        }
        out
    }

    /// Pose track implied by a motion state (rotations decoded leniently).
    pub fn from_motion(seq: &MotionSequence) -> Self {
        let frames = seq
            .frames
            .iter()
            .map(|f| PoseFrame {
                root_translation: f.r,
                root_rotation: geom::rot6d_to_matrix_lenient(&f.phi),
                local: f.j_r.iter().map(geom::rot6d_to_matrix_lenient).collect(),
            })
            .collect();
        Self { fps: seq.fps, frames }
    }
}

/// Global joint positions for one pose.
pub fn forward_kinematics(skel: &Skeleton, frame: &PoseFrame) -> Vec<Vec3> {
    skel.forward_kinematics_full(&frame.root_translation, &frame.root_rotation, &frame.local)
        .positions
}

/// The per-frame motion state.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub r: Vec3,
    pub r_dot: Vec3,
    pub phi: Rot6D,
    pub phi_dot: Vec3,
    pub j_r: [Rot6D; LOCAL_JOINTS],
    pub j_p: [Vec3; LOCAL_JOINTS],
    pub j_v: [Vec3; LOCAL_JOINTS],
    pub p: [f64; 4],
}

impl Default for MotionFrame {
    fn default() -> Self {
        Self {
            r: Vec3::zeros(),
            r_dot: Vec3::zeros(),
            phi: Rot6D::IDENTITY,
            phi_dot: Vec3::zeros(),
            j_r: [Rot6D::IDENTITY; LOCAL_JOINTS],
            j_p: [Vec3::zeros(); LOCAL_JOINTS],
            j_v: [Vec3::zeros(); LOCAL_JOINTS],
            p: [0.0; 4],
        }
    }
}

fn put3(out: &mut [f64], at: usize, v: &Vec3) {
    out[at..at + 3].copy_from_slice(v.as_slice());
}

fn get3(x: &[f64], at: usize) -> Vec3 {
    Vec3::new(x[at], x[at + 1], x[at + 2])
}

fn get6(x: &[f64], at: usize) -> Rot6D {
    let mut v = [0.0; 6];
    v.copy_from_slice(&x[at..at + 6]);
    Rot6D(v)
}

impl MotionFrame {
    pub fn flatten(&self) -> [f64; MOTION_DIM] {
        use layout::*;
        let mut out = [0.0; MOTION_DIM];
        put3(&mut out, R, &self.r);
        put3(&mut out, R_DOT, &self.r_dot);
        out[PHI..PHI + 6].copy_from_slice(&self.phi.0);
        put3(&mut out, PHI_DOT, &self.phi_dot);
        for j in 0..LOCAL_JOINTS {
            out[J_R + 6 * j..J_R + 6 * j + 6].copy_from_slice(&self.j_r[j].0);
            put3(&mut out, J_P + 3 * j, &self.j_p[j]);
            put3(&mut out, J_V + 3 * j, &self.j_v[j]);
        }
        out[P..P + 4].copy_from_slice(&self.p);
        out
    }

    pub fn unflatten(x: &[f64]) -> Result<Self> {
        use layout::*;
        if x.len() != MOTION_DIM {
            return Err(Error::LengthMismatch { left: x.len(), right: MOTION_DIM });
        }
        let mut f = MotionFrame {
            r: get3(x, R),
            r_dot: get3(x, R_DOT),
            phi: get6(x, PHI),
            phi_dot: get3(x, PHI_DOT),
            ..Default::default()
        };
        for j in 0..LOCAL_JOINTS {
            f.j_r[j] = get6(x, J_R + 6 * j);
            f.j_p[j] = get3(x, J_P + 3 * j);
            f.j_v[j] = get3(x, J_V + 3 * j);
        }
        f.p.copy_from_slice(&x[P..P + 4]);
        Ok(f)
    }
}

/// A motion clip in the 271-dim representation.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub frames: Vec<MotionFrame>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row-major `[frames, 271]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * MOTION_DIM);
        for f in &self.frames {
            out.extend_from_slice(&f.flatten());
        }
        out
    }

    pub fn from_flat(fps: f64, data: &[f64]) -> Result<Self> {
        if data.len() % MOTION_DIM != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a whole number of {MOTION_DIM}-wide frames",
                data.len()
            )));
        }
        let frames = data.chunks_exact(MOTION_DIM).map(MotionFrame::unflatten).collect::<Result<_>>()?;
        Ok(Self { fps, frames })
    }

    /// Root-relative joint positions of every frame, `[frames][21]`.
    pub fn joint_positions(&self) -> Vec<[Vec3; LOCAL_JOINTS]> {
        self.frames.iter().map(|f| f.j_p).collect()
    }
}

/// Central difference of a sampled signal; one-sided at the two ends.
pub(crate) fn central_diff(xs: &[Vec3], dt: f64) -> Vec<Vec3> {
    let n = xs.len();
    (0..n)
        .map(|t| {
            if n < 2 {
                Vec3::zeros()
            } else if t == 0 {
                (xs[1] - xs[0]) / dt
            } else if t == n - 1 {
                (xs[n - 1] - xs[n - 2]) / dt
            } else {
                (xs[t + 1] - xs[t - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

/// Body-frame angular velocity of a rotation track, central in the interior.
pub(crate) fn rotation_rates(rs: &[RotationMatrix], dt: f64) -> Vec<Vec3> {
    let n = rs.len();
    let rate = |a: usize, b: usize, h: f64| geom::log_so3(&rs[a].transpose().compose(&rs[b])) / h;
    (0..n)
        .map(|t| {
            if n < 2 {
                Vec3::zeros()
            } else if t == 0 {
                rate(0, 1, dt)
            } else if t == n - 1 {
                rate(n - 2, n - 1, dt)
            } else {
                rate(t - 1, t + 1, 2.0 * dt)
            }
        })
        .collect()
}

/// Binary toe/heel contacts: 1 when the joint is below [`CONTACT_HEIGHT`]
/// and slower than [`CONTACT_SPEED`]. Ground is the plane `y = 0`.
pub fn derive_contacts(foot_positions: &[[Vec3; 4]], fps: f64) -> Vec<[f64; 4]> {
    let dt = 1.0 / fps;
    let mut out = vec![[0.0; 4]; foot_positions.len()];
    for k in 0..4 {
        let track: Vec<Vec3> = foot_positions.iter().map(|f| f[k]).collect();
        let vel = central_diff(&track, dt);
        for (t, o) in out.iter_mut().enumerate() {
            let grounded = track[t].y < CONTACT_HEIGHT && vel[t].norm() < CONTACT_SPEED;
            o[k] = if grounded { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Converts a pose track into the motion state: world-frame finite-difference
/// velocities, root-relative positions in world axes, and contact labels.
pub fn build_motion_representation(track: &RawPoseTrack, skel: &Skeleton) -> Result<MotionSequence> {
    let n = track.len();
    if n < 3 {
        return Err(Error::TooShort { needed: 3, got: n });
    }
    if track.frames[0].local.len() != skel.joint_count() - 1 || skel.joint_count() != JOINT_COUNT {
        return Err(Error::ShapeMismatch(format!(
            "track has {} local joints; the motion state needs {LOCAL_JOINTS}",
            track.frames[0].local.len()
        )));
    }
    let dt = 1.0 / track.fps;
    let world: Vec<Vec<Vec3>> = crate::par::map(&track.frames, |f| forward_kinematics(skel, f));
    let roots: Vec<Vec3> = track.frames.iter().map(|f| f.root_translation).collect();
    let root_rots: Vec<RotationMatrix> = track.frames.iter().map(|f| f.root_rotation).collect();
    let r_dot = central_diff(&roots, dt);
    let phi_dot = rotation_rates(&root_rots, dt);
    let joint_vel: Vec<Vec<Vec3>> = (1..JOINT_COUNT)
        .map(|j| central_diff(&world.iter().map(|w| w[j]).collect::<Vec<_>>(), dt))
        .collect();
    let feet = skel.foot_joints();
    let foot_tracks: Vec<[Vec3; 4]> = world.iter().map(|w| feet.map(|k| w[k])).collect();
    let contacts = derive_contacts(&foot_tracks, track.fps);

    let frames = (0..n)
        .map(|t| {
            let src = &track.frames[t];
            let mut f = MotionFrame {
                r: roots[t],
                r_dot: r_dot[t],
                phi: geom::matrix_to_rot6d(&src.root_rotation),
                phi_dot: phi_dot[t],
                p: contacts[t],
                ..Default::default()
            };
            for j in 0..LOCAL_JOINTS {
                f.j_r[j] = geom::matrix_to_rot6d(&src.local[j]);
                f.j_p[j] = world[t][j + 1] - world[t][0];
                f.j_v[j] = joint_vel[j][t];
            }
            f
        })
        .collect();
    Ok(MotionSequence { fps: track.fps, frames })
}

/// Resamples to `target_fps` by linear interpolation of translations and
/// geodesic interpolation of rotations. The output spans the same duration.
pub fn resample(track: &RawPoseTrack, target_fps: f64) -> Result<RawPoseTrack> {
    if !(target_fps > 0.0 && target_fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("target fps must be positive, got {target_fps}")));
    }
    if target_fps == track.fps || track.len() < 2 {
        return RawPoseTrack::new(target_fps, track.frames.clone());
    }
    let ratio = target_fps / track.fps;
    let last = (track.len() - 1) as f64;
    let count = (last * ratio + 1e-9).floor() as usize + 1;
    let frames = (0..count)
        .map(|i| {
            let s = (i as f64 / ratio).min(last);
            let lo = s.floor() as usize;
            let u = s - lo as f64;
            let a = &track.frames[lo];
            if u < 1e-12 || lo + 1 >= track.len() {
                return a.clone();
            }
            let b = &track.frames[lo + 1];
            PoseFrame {
                root_translation: a.root_translation * (1.0 - u) + b.root_translation * u,
                root_rotation: geom::slerp(&a.root_rotation, &b.root_rotation, u),
                local: a.local.iter().zip(&b.local).map(|(x, y)| geom::slerp(x, y, u)).collect(),
            }
        })
        .collect();
    RawPoseTrack::new(target_fps, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn static_track(n: usize, fps: f64) -> RawPoseTrack {
        let mut f = PoseFrame::rest(JOINT_COUNT);
        f.root_translation = Vec3::new(0.0, REST_ROOT_HEIGHT, 0.0);
        RawPoseTrack::new(fps, vec![f; n]).unwrap()
    }

    fn root_track(fps: f64, n: usize, pos: impl Fn(f64) -> Vec3) -> RawPoseTrack {
        let frames = (0..n)
            .map(|i| {
                let mut f = PoseFrame::rest(JOINT_COUNT);
                f.root_translation = pos(i as f64 / fps);
                f
            })
            .collect();
        RawPoseTrack::new(fps, frames).unwrap()
    }

    #[test]
    fn layout_width() {
        assert_eq!(MOTION_DIM, 271);
        assert_eq!(layout::J_P, 141);
        assert_eq!(layout::J_V, 204);
        assert_eq!(layout::P, 267);
    }

    #[test]
    fn flatten_round_trip() {
        let flat: Vec<f64> = (0..MOTION_DIM).map(|i| i as f64 * 0.5 - 3.0).collect();
        let f = MotionFrame::unflatten(&flat).unwrap();
        assert_eq!(f.flatten().to_vec(), flat);
        assert!(MotionFrame::unflatten(&flat[..270]).is_err());
    }

    #[test]
    fn static_pose_has_zero_velocity_and_full_contact() {
        let seq = build_motion_representation(&static_track(10, 60.0), &Skeleton::standard()).unwrap();
        for f in &seq.frames {
            assert_eq!(f.r_dot, Vec3::zeros());
            assert_eq!(f.phi_dot, Vec3::zeros());
            assert!(f.j_v.iter().all(|v| *v == Vec3::zeros()));
            assert_eq!(f.p, [1.0; 4]);
        }
    }

    #[test]
    fn constant_root_velocity() {
        let tr = root_track(60.0, 20, |t| Vec3::new(t, 0.95, 0.0));
        let seq = build_motion_representation(&tr, &Skeleton::standard()).unwrap();
        for f in &seq.frames[1..19] {
            assert!((f.r_dot - Vec3::x()).norm() < 1e-12);
        }
    }

    #[test]
    fn sinusoidal_root_velocity_amplitude() {
        let tr = root_track(60.0, 121, |t| Vec3::new(0.1 * (2.0 * PI * t).sin(), 0.95, 0.0));
        let seq = build_motion_representation(&tr, &Skeleton::standard()).unwrap();
        let amp = seq.frames[1..120].iter().map(|f| f.r_dot.x.abs()).fold(0.0, f64::max);
        let want = 0.2 * PI;
        assert!(((amp - want) / want).abs() < 0.005, "{amp} vs {want}");
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            build_motion_representation(&static_track(2, 60.0), &Skeleton::standard()),
            Err(Error::TooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn contact_gates() {
        let fixed = vec![[Vec3::new(0.0, 0.005, 0.0); 4]; 5];
        assert!(derive_contacts(&fixed, 60.0).iter().all(|c| *c == [1.0; 4]));
        let high = vec![[Vec3::new(0.0, 0.5, 0.0); 4]; 5];
        assert!(derive_contacts(&high, 60.0).iter().all(|c| *c == [0.0; 4]));
        let sliding: Vec<[Vec3; 4]> = (0..10).map(|i| [Vec3::new(i as f64 / 60.0, 0.01, 0.0); 4]).collect();
        assert!(derive_contacts(&sliding, 60.0).iter().all(|c| *c == [0.0; 4]));
    }

    #[test]
    fn resample_identity_and_subsample() {
        let tr = root_track(120.0, 13, |t| Vec3::new(t, 0.0, -2.0 * t));
        assert_eq!(resample(&tr, 120.0).unwrap(), tr);
        let half = resample(&tr, 60.0).unwrap();
        assert_eq!(half.len(), 7);
        for (i, f) in half.frames().iter().enumerate() {
            assert_eq!(f.root_translation, tr.frames()[2 * i].root_translation);
        }
        assert!(resample(&tr, 0.0).is_err());
    }

    #[test]
    fn resample_upsamples_rotation_at_half_steps() {
        let w = 1.3; // rad/s about an oblique axis
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let frames = (0..10)
            .map(|i| {
                let mut f = PoseFrame::rest(JOINT_COUNT);
                f.root_rotation = RotationMatrix::from_axis_angle(&axis, w * i as f64 / 30.0);
                f.local[3] = RotationMatrix::rot_x(-w * i as f64 / 30.0);
                f
            })
            .collect();
        let tr = RawPoseTrack::new(30.0, frames).unwrap();
        let up = resample(&tr, 60.0).unwrap();
        assert_eq!(up.len(), 19);
        for (i, f) in up.frames().iter().enumerate() {
            let t = i as f64 / 60.0;
            let want = RotationMatrix::from_axis_angle(&axis, w * t);
            assert!((f.root_rotation.matrix() - want.matrix()).norm() < 1e-8);
            assert!((f.local[3].matrix() - RotationMatrix::rot_x(-w * t).matrix()).norm() < 1e-8);
        }
    }

    #[test]
    fn fk_translation_equivariance() {
        let skel = Skeleton::standard();
        let f = PoseFrame::rest(JOINT_COUNT);
        let mut g = f.clone();
        g.root_translation = Vec3::x();
        let (a, b) = (forward_kinematics(&skel, &f), forward_kinematics(&skel, &g));
        for (p, q) in a.iter().zip(&b) {
            assert!((q - p - Vec3::x()).norm() < 1e-15);
        }
    }
}
