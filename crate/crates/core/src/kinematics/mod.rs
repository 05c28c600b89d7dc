//! Serial revolute arms: chain model, forward kinematics, damped-least-squares
//! inverse kinematics and the chain registry.

mod ik;
mod registry;

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rotation};
use crate::sampler::{stable_key, SeedPath};

pub use ik::{inverse_kinematics, inverse_kinematics_with, IkConfig, IkSolution};
pub use registry::{ChainRegistry, REGISTRY_ENV};

/// Supported joint counts for registry robots.
pub const DOF_RANGE: std::ops::RangeInclusive<usize> = 5..=8;

/// Master seed for the deterministic IK restart configurations.
const IK_RESTART_SEED: u64 = 0x1c0f_fee5_eed5;
pub const IK_RESTARTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {joint} angle {value} outside limits [{lo}, {hi}]")]
    LimitViolation { joint: usize, value: f64, lo: f64, hi: f64 },
    #[error("expected {expected} joint angles, got {got}")]
    DofMismatch { expected: usize, got: usize },
    #[error("target unreachable: best residual {position_error:.3e} m / {rotation_error:.3e} rad")]
    Unreachable {
        position_error: f64,
        rotation_error: f64,
        best: JointConfig,
    },
    #[error("invalid chain '{name}': {reason}")]
    InvalidChain { name: String, reason: String },
    #[error("unknown robot '{0}'")]
    UnknownChain(String),
    #[error("registry: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
    /// Joint frame relative to the parent link frame.
    pub origin: Pose,
    pub limits: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkGeometry {
    pub capsules: Vec<Capsule>,
}

/// Joint angles in radians, one per joint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(angles: Vec<f64>) -> Self {
        Self(angles)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardKinematics {
    /// Gripper-tip pose in the base frame.
    pub tip: Pose,
    /// Pose of every link; index 0 is the fixed base link.
    pub links: Vec<Pose>,
    /// Joint frames before the joint rotation is applied.
    pub joint_frames: Vec<Pose>,
}

/// A serial revolute arm.
///
/// Link `k` (for `k >= 1`) hangs off joint `k - 1`; link 0 is the base and
/// always sits at the identity pose.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    name: String,
    joints: Vec<JointSpec>,
    links: Vec<LinkGeometry>,
    tip_offset: Pose,
    home: JointConfig,
    restarts: Vec<JointConfig>,
}

impl KinematicChain {
    /// Builds and validates a registry robot (5 to 8 joints).
    pub fn new(
        name: impl Into<String>,
        joints: Vec<JointSpec>,
        links: Vec<LinkGeometry>,
        tip_offset: Pose,
        home: JointConfig,
    ) -> Result<Self, KinematicsError> {
        let name = name.into();
        if !DOF_RANGE.contains(&joints.len()) {
            return Err(KinematicsError::InvalidChain {
                name,
                reason: format!("{} joints, expected {DOF_RANGE:?}", joints.len()),
            });
        }
        Self::build(name, joints, links, tip_offset, home)
    }

    fn build(
        name: String,
        joints: Vec<JointSpec>,
        links: Vec<LinkGeometry>,
        tip_offset: Pose,
        home: JointConfig,
    ) -> Result<Self, KinematicsError> {
        let chain_name = name.clone();
        let invalid = |reason: String| KinematicsError::InvalidChain {
            name: chain_name.clone(),
            reason,
        };
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("joint {i} axis is not unit length")));
            }
            if !(j.limits.0 < j.limits.1) {
                return Err(invalid(format!("joint {i} limits {:?} are empty", j.limits)));
            }
            if !j.origin.is_finite() {
                return Err(invalid(format!("joint {i} origin is not finite")));
            }
        }
        if links.len() != joints.len() + 1 {
            return Err(invalid(format!(
                "{} links for {} joints, expected one base link plus one per joint",
                links.len(),
                joints.len()
            )));
        }
        if links.iter().flat_map(|l| &l.capsules).any(|c| !(c.radius > 0.0)) {
            return Err(invalid("capsule radius must be positive".into()));
        }
        let mut chain = Self {
            name,
            joints,
            links,
            tip_offset,
            home,
            restarts: Vec::new(),
        };
        chain.check(&chain.home).map_err(|e| invalid(format!("home configuration: {e}")))?;
        chain.restarts = (0..IK_RESTARTS as u64)
            .map(|i| {
                let mut stream = SeedPath::new(IK_RESTART_SEED)
                    .child("ik-restart", stable_key(&chain.name), i)
                    .stream();
                chain.random_config(&mut stream)
            })
            .collect();
        Ok(chain)
    }

    /// Two revolute joints about z with link lengths `l1`, `l2` in the
    /// x-y plane. A test fixture for analytic checks; it sits below the
    /// registry DOF range on purpose.
    pub fn planar_two_link(l1: f64, l2: f64) -> Self {
        let joint = |x: f64| JointSpec {
            axis: Vector3::z(),
            origin: Pose::from_translation(x, 0.0, 0.0),
            limits: (-std::f64::consts::PI, std::f64::consts::PI),
        };
        let capsule = |len: f64| LinkGeometry {
            capsules: vec![Capsule {
                a: Vector3::zeros(),
                b: Vector3::new(len, 0.0, 0.0),
                radius: 0.02,
                color: [200, 200, 200],
            }],
        };
        Self::build(
            "planar-2".into(),
            vec![joint(0.0), joint(l1)],
            vec![LinkGeometry::default(), capsule(l1), capsule(l2)],
            Pose::from_translation(l2, 0.0, 0.0),
            JointConfig(vec![0.0, 0.0]),
        )
        .expect("static fixture is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn links(&self) -> &[LinkGeometry] {
        &self.links
    }

    pub fn tip_offset(&self) -> &Pose {
        &self.tip_offset
    }

    pub fn home(&self) -> &JointConfig {
        &self.home
    }

    /// Gripper-tip pose at the home configuration.
    pub fn home_pose(&self) -> Pose {
        self.fk_unchecked(self.home.as_slice()).tip
    }

    /// The deterministic restart configurations used by IK.
    pub fn restart_configs(&self) -> &[JointConfig] {
        &self.restarts
    }

    /// Distinct capsule colors, used by the color segmentation fallback.
    pub fn palette(&self) -> Vec<[u8; 3]> {
        let mut colors: Vec<[u8; 3]> = self
            .links
            .iter()
            .flat_map(|l| l.capsules.iter().map(|c| c.color))
            .collect();
        colors.sort_unstable();
        colors.dedup();
        colors
    }

    pub fn check(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DofMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        for (i, (value, j)) in q.0.iter().zip(&self.joints).enumerate() {
            let (lo, hi) = j.limits;
            if !(lo..=hi).contains(value) {
                return Err(KinematicsError::LimitViolation {
                    joint: i,
                    value: *value,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limits.0, j.limits.1);
        }
    }

    /// A configuration drawn uniformly inside the joint limits.
    pub fn random_config(&self, rng: &mut crate::sampler::Stream) -> JointConfig {
        use rand::Rng;
        JointConfig(
            self.joints
                .iter()
                .map(|j| rng.random_range(j.limits.0..=j.limits.1))
                .collect(),
        )
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<ForwardKinematics, KinematicsError> {
        self.check(q)?;
        Ok(self.fk_unchecked(q.as_slice()))
    }

    pub(crate) fn fk_unchecked(&self, q: &[f64]) -> ForwardKinematics {
        let mut links = Vec::with_capacity(self.joints.len() + 1);
        let mut joint_frames = Vec::with_capacity(self.joints.len());
        let mut current = Pose::identity();
        links.push(current);
        for (joint, angle) in self.joints.iter().zip(q) {
            let frame = current.compose(&joint.origin);
            joint_frames.push(frame);
            current = frame.compose(&Pose::from_rotation(Rotation::from_axis_angle(&joint.axis, *angle)));
            links.push(current);
        }
        ForwardKinematics {
            tip: current.compose(&self.tip_offset),
            links,
            joint_frames,
        }
    }
}

/// Forward kinematics of `chain` at `q`.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointConfig) -> Result<ForwardKinematics, KinematicsError> {
    chain.forward_kinematics(q)
}

pub type SharedChain = Arc<KinematicChain>;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn planar_chain_matches_analytic_fk() {
        let chain = KinematicChain::planar_two_link(0.3, 0.2);
        let fk = chain.forward_kinematics(&JointConfig(vec![FRAC_PI_2, 0.0])).unwrap();
        assert_relative_eq!(fk.tip.translation, Vector3::new(0.0, 0.5, 0.0), epsilon = 1e-12);
        let fk = chain.forward_kinematics(&JointConfig(vec![0.4, -0.7])).unwrap();
        let expected = Vector3::new(
            0.3 * 0.4f64.cos() + 0.2 * (-0.3f64).cos(),
            0.3 * 0.4f64.sin() + 0.2 * (-0.3f64).sin(),
            0.0,
        );
        assert_relative_eq!(fk.tip.translation, expected, epsilon = 1e-12);
    }

    #[test]
    fn home_configuration_gives_home_pose() {
        let reg = ChainRegistry::builtin();
        for chain in reg.chains() {
            let fk = chain.forward_kinematics(chain.home()).unwrap();
            assert_eq!(fk.tip, chain.home_pose());
        }
    }

    #[test]
    fn last_joint_does_not_move_its_origin() {
        let reg = ChainRegistry::builtin();
        for chain in reg.chains() {
            let mut q = chain.home().clone();
            let before = chain.forward_kinematics(&q).unwrap();
            let last = q.len() - 1;
            q.0[last] += 0.3;
            let after = chain.forward_kinematics(&q).unwrap();
            assert_eq!(before.joint_frames[last].translation, after.joint_frames[last].translation);
            assert_ne!(before.tip, after.tip);
        }
    }

    #[test]
    fn fk_is_bit_deterministic() {
        let chain = ChainRegistry::builtin().get("arm-A").unwrap().clone();
        let q = JointConfig(vec![0.3, -0.2, 0.5, 1.2, -0.4, 0.9, 0.1]);
        let a = chain.forward_kinematics(&q).unwrap();
        let b = chain.forward_kinematics(&q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn link_tree_structure() {
        let chain = ChainRegistry::builtin().get("arm-C").unwrap().clone();
        let q = chain.home().clone();
        let fk = chain.forward_kinematics(&q).unwrap();
        assert_eq!(fk.links.len(), chain.dof() + 1);
        assert_eq!(fk.links[0], Pose::identity());
        for (i, joint) in chain.joints().iter().enumerate() {
            let child = fk.links[i]
                .compose(&joint.origin)
                .compose(&Pose::from_rotation(Rotation::from_axis_angle(&joint.axis, q.0[i])));
            assert_eq!(child, fk.links[i + 1]);
        }
        assert_eq!(fk.tip, fk.links.last().unwrap().compose(chain.tip_offset()));
    }

    #[test]
    fn limit_and_dof_errors() {
        let chain = ChainRegistry::builtin().get("arm-B").unwrap().clone();
        let mut q = chain.home().clone();
        q.0[1] = 10.0;
        assert!(matches!(
            chain.forward_kinematics(&q),
            Err(KinematicsError::LimitViolation { joint: 1, .. })
        ));
        assert!(matches!(
            chain.forward_kinematics(&JointConfig(vec![0.0; 3])),
            Err(KinematicsError::DofMismatch { expected: 6, got: 3 })
        ));
    }

    #[test]
    fn restarts_are_deterministic_and_within_limits() {
        let a = ChainRegistry::builtin().get("arm-A").unwrap().clone();
        let b = ChainRegistry::builtin().get("arm-A").unwrap().clone();
        assert_eq!(a.restart_configs(), b.restart_configs());
        assert_eq!(a.restart_configs().len(), IK_RESTARTS);
        for q in a.restart_configs() {
            a.check(q).unwrap();
        }
    }

    #[test]
    fn dof_range_is_enforced() {
        let planar = KinematicChain::planar_two_link(0.3, 0.2);
        let err = KinematicChain::new(
            "tiny",
            planar.joints().to_vec(),
            planar.links().to_vec(),
            Pose::identity(),
            JointConfig(vec![0.0, 0.0]),
        );
        assert!(matches!(err, Err(KinematicsError::InvalidChain { .. })));
    }
}
