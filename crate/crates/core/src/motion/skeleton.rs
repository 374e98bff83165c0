use crate::error::{Error, Result};
use crate::geom::{RotationMatrix, Vec3};

/// Joint indices of [`Skeleton::standard`].
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const L_KNEE: usize = 2;
    pub const L_ANKLE: usize = 3;
    pub const L_TOE: usize = 4;
    pub const L_HEEL: usize = 5;
    pub const R_HIP: usize = 6;
    pub const R_KNEE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const R_TOE: usize = 9;
    pub const R_HEEL: usize = 10;
    pub const SPINE1: usize = 11;
    pub const SPINE2: usize = 12;
    pub const SPINE3: usize = 13;
    pub const NECK: usize = 14;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const L_ELBOW: usize = 17;
    pub const L_WRIST: usize = 18;
    pub const R_SHOULDER: usize = 19;
    pub const R_ELBOW: usize = 20;
    pub const R_WRIST: usize = 21;
}

/// Total joints of the standard skeleton (root + 21 local joints).
pub const JOINT_COUNT: usize = 22;
pub const LOCAL_JOINTS: usize = JOINT_COUNT - 1;

/// Height of the root above the ground in the rest pose with straight legs.
pub const REST_ROOT_HEIGHT: f64 = 0.95;

/// Kinematic tree. Joint 0 is the root; every other joint's parent has a
/// smaller index.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parents: Vec<usize>,
    rest_offsets: Vec<Vec3>,
    foot_joints: [usize; 4],
}

// (parent, offset) in metres; x left, y up, z forward
const STANDARD: [(usize, [f64; 3]); JOINT_COUNT] = [
    (0, [0.0, 0.0, 0.0]),
    (0, [0.09, -0.08, 0.0]),
    (1, [0.0, -0.40, 0.0]),
    (2, [0.0, -0.40, 0.0]),
    (3, [0.0, -0.07, 0.14]),
    (3, [0.0, -0.07, -0.05]),
    (0, [-0.09, -0.08, 0.0]),
    (6, [0.0, -0.40, 0.0]),
    (7, [0.0, -0.40, 0.0]),
    (8, [0.0, -0.07, 0.14]),
    (8, [0.0, -0.07, -0.05]),
    (0, [0.0, 0.10, -0.01]),
    (11, [0.0, 0.12, 0.0]),
    (12, [0.0, 0.12, 0.0]),
    (13, [0.0, 0.14, 0.01]),
    (14, [0.0, 0.10, 0.02]),
    (13, [0.17, 0.10, 0.0]),
    (16, [0.0, -0.28, 0.0]),
    (17, [0.0, -0.25, 0.0]),
    (13, [-0.17, 0.10, 0.0]),
    (19, [0.0, -0.28, 0.0]),
    (20, [0.0, -0.25, 0.0]),
];

/// Global joint state produced by forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<RotationMatrix>,
}

impl Skeleton {
    /// The fixed 22-joint body used throughout the crate. Feet are
    /// (left toe, left heel, right toe, right heel).
    pub fn standard() -> Self {
        let parents = STANDARD.iter().map(|(p, _)| *p).collect();
        let rest_offsets = STANDARD.iter().map(|(_, o)| Vec3::new(o[0], o[1], o[2])).collect();
        Self {
            parents,
            rest_offsets,
            foot_joints: [joint::L_TOE, joint::L_HEEL, joint::R_TOE, joint::R_HEEL],
        }
    }

    /// Arbitrary tree; `parents[0]` is ignored. Foot joints must be leaves.
    pub fn new(parents: Vec<usize>, rest_offsets: Vec<Vec3>, foot_joints: [usize; 4]) -> Result<Self> {
        let n = parents.len();
        if n == 0 || rest_offsets.len() != n {
            return Err(Error::InvalidArgument("parents and offsets must be non-empty and equal length".into()));
        }
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p >= j {
                return Err(Error::InvalidArgument(format!("joint {j} has parent {p}; parents must precede children")));
            }
        }
        if rest_offsets.iter().any(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("rest offsets must be finite".into()));
        }
        for &f in &foot_joints {
            if f >= n || f == 0 || parents.iter().skip(1).any(|&p| p == f) {
                return Err(Error::InvalidArgument(format!("foot joint {f} must be a non-root leaf")));
            }
        }
        Ok(Self { parents, rest_offsets, foot_joints })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        (j > 0).then(|| self.parents[j])
    }

    pub fn rest_offset(&self, j: usize) -> Vec3 {
        self.rest_offsets[j]
    }

    pub fn foot_joints(&self) -> [usize; 4] {
        self.foot_joints
    }

    /// Global positions and rotations. `local` holds one rotation per
    /// non-root joint, in joint order.
    pub fn forward_kinematics_full(
        &self,
        root_translation: &Vec3,
        root_rotation: &RotationMatrix,
        local: &[RotationMatrix],
    ) -> JointState {
        let n = self.joint_count();
        debug_assert_eq!(local.len(), n - 1);
        let mut positions = Vec::with_capacity(n);
        let mut rotations = Vec::with_capacity(n);
        positions.push(*root_translation);
        rotations.push(*root_rotation);
        for j in 1..n {
            let p = self.parents[j];
            let pos = positions[p] + rotations[p].rotate(&self.rest_offsets[j]);
            let rot = rotations[p].compose(&local[j - 1]);
            positions.push(pos);
            rotations.push(rot);
        }
        JointState { positions, rotations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn standard_is_valid_tree() {
        let s = Skeleton::standard();
        assert_eq!(s.joint_count(), JOINT_COUNT);
        assert!(Skeleton::new(s.parents.clone(), s.rest_offsets.clone(), s.foot_joints).is_ok());
    }

    #[test]
    fn identity_pose_is_cumulative_offsets() {
        let s = Skeleton::standard();
        let st = s.forward_kinematics_full(&Vec3::zeros(), &RotationMatrix::identity(), &vec![RotationMatrix::identity(); LOCAL_JOINTS]);
        for j in 1..JOINT_COUNT {
            let mut want = Vec3::zeros();
            let mut k = j;
            while k != 0 {
                want += s.rest_offset(k);
                k = s.parents[k];
            }
            assert!((st.positions[j] - want).norm() < 1e-15);
        }
        // rest pose stands on the ground
        for f in s.foot_joints() {
            assert!((st.positions[f].y + REST_ROOT_HEIGHT).abs() < 1e-12);
        }
    }

    #[test]
    fn two_link_chain() {
        let s = Skeleton::new(
            vec![0, 0, 1, 2, 2, 2, 2],
            vec![Vec3::zeros(), Vec3::x(), Vec3::x(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()],
            [3, 4, 5, 6],
        )
        .unwrap();
        let mut local = vec![RotationMatrix::identity(); 6];
        local[0] = RotationMatrix::rot_z(FRAC_PI_2);
        let st = s.forward_kinematics_full(&Vec3::zeros(), &RotationMatrix::identity(), &local);
        assert!((st.positions[2] - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_trees() {
        let o = vec![Vec3::zeros(); 3];
        assert!(Skeleton::new(vec![0, 2, 0], o.clone(), [1, 2, 1, 2]).is_err());
        assert!(Skeleton::new(vec![0, 0, 1], o, [1, 2, 2, 2]).is_err()); // 1 is not a leaf
    }
}
