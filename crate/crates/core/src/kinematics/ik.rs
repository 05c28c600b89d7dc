//! Damped-least-squares IK with deterministic restarts.
//!
//! Each attempt iterates `dq = Jᵀ (J Jᵀ + λ² I)⁻¹ e` on the 6-D pose error,
//! clamps the step and the joint limits, and stops once both the position
//! and the geodesic rotation error are inside tolerance. The seed is tried
//! first, then the chain's fixed restart configurations; among converged
//! attempts the one closest to the seed wins.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::{JointConfig, KinematicChain, KinematicsError};
use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub damping: f64,
    /// Largest per-joint change in one iteration (rad).
    pub max_step: f64,
    pub position_tolerance: f64,
    pub rotation_tolerance: f64,
    pub max_iterations: usize,
    /// How many of the chain's restart configurations to try.
    pub restarts: usize,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_step: 0.2,
            position_tolerance: 1e-4,
            rotation_tolerance: 1e-3,
            max_iterations: 200,
            restarts: super::IK_RESTARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub joints: JointConfig,
    pub position_error: f64,
    pub rotation_error: f64,
    pub iterations: usize,
    /// 0 for the seed, `k` for restart `k - 1`.
    pub attempt: usize,
}

struct Attempt {
    q: Vec<f64>,
    position_error: f64,
    rotation_error: f64,
    iterations: usize,
    converged: bool,
}

fn pose_error(current: &Pose, target: &Pose) -> (Vector6<f64>, f64, f64) {
    let dp = target.translation - current.translation;
    let dr = target.rotation.compose(&current.rotation.inverse());
    let w = dr.log();
    let e = Vector6::new(dp.x, dp.y, dp.z, w.x, w.y, w.z);
    (e, dp.norm(), dr.angle())
}

fn solve_from(chain: &KinematicChain, target: &Pose, start: &[f64], cfg: &IkConfig) -> Attempt {
    let mut q = start.to_vec();
    chain.clamp(&mut q);
    let damping2 = cfg.damping * cfg.damping;
    let mut iterations = 0;
    loop {
        let fk = chain.fk_unchecked(&q);
        let (e, position_error, rotation_error) = pose_error(&fk.tip, target);
        let converged = position_error <= cfg.position_tolerance && rotation_error <= cfg.rotation_tolerance;
        if converged || iterations == cfg.max_iterations {
            return Attempt {
                q,
                position_error,
                rotation_error,
                iterations,
                converged,
            };
        }
        iterations += 1;

        let tip = fk.tip.translation;
        let columns: Vec<Vector6<f64>> = chain
            .joints
            .iter()
            .zip(&fk.joint_frames)
            .map(|(joint, frame)| {
                let axis = frame.rotation.apply(&joint.axis);
                let lin = axis.cross(&(tip - frame.translation));
                Vector6::new(lin.x, lin.y, lin.z, axis.x, axis.y, axis.z)
            })
            .collect();
        let mut jjt = Matrix6::identity() * damping2;
        for c in &columns {
            jjt += c * c.transpose();
        }
        let Some(chol) = jjt.cholesky() else {
            continue;
        };
        let y = chol.solve(&e);
        let mut dq: Vec<f64> = columns.iter().map(|c| c.dot(&y)).collect();
        let largest = dq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if largest > cfg.max_step {
            let scale = cfg.max_step / largest;
            dq.iter_mut().for_each(|v| *v *= scale);
        }
        for (qi, d) in q.iter_mut().zip(&dq) {
            *qi += d;
        }
        chain.clamp(&mut q);
    }
}

/// Solves for joints placing the gripper tip at `target`, starting from
/// `seed`, with the default [`IkConfig`].
pub fn inverse_kinematics(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointConfig,
) -> Result<IkSolution, KinematicsError> {
    inverse_kinematics_with(chain, target, seed, &IkConfig::default())
}

pub fn inverse_kinematics_with(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointConfig,
    cfg: &IkConfig,
) -> Result<IkSolution, KinematicsError> {
    chain.check(seed)?;
    let starts = std::iter::once(seed).chain(chain.restart_configs().iter().take(cfg.restarts));

    let mut best: Option<(f64, IkSolution)> = None;
    let mut closest_failure: Option<Attempt> = None;
    for (attempt_index, start) in starts.enumerate() {
        let attempt = solve_from(chain, target, start.as_slice(), cfg);
        if attempt.converged {
            let q = JointConfig(attempt.q);
            let distance = q.distance(seed);
            if best.as_ref().is_none_or(|(d, _)| distance < *d) {
                best = Some((
                    distance,
                    IkSolution {
                        joints: q,
                        position_error: attempt.position_error,
                        rotation_error: attempt.rotation_error,
                        iterations: attempt.iterations,
                        attempt: attempt_index,
                    },
                ));
            }
            // Nothing can be closer than the seed itself.
            if distance == 0.0 {
                break;
            }
        } else {
            let worse = closest_failure.as_ref().is_none_or(|f| {
                attempt.position_error + attempt.rotation_error < f.position_error + f.rotation_error
            });
            if worse {
                closest_failure = Some(attempt);
            }
        }
    }
    match (best, closest_failure) {
        (Some((_, solution)), _) => Ok(solution),
        (None, Some(f)) => Err(KinematicsError::Unreachable {
            position_error: f.position_error,
            rotation_error: f.rotation_error,
            best: JointConfig(f.q),
        }),
        (None, None) => unreachable!("at least the seed is attempted"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::ChainRegistry;
    use crate::sampler::SeedPath;

    #[test]
    fn seed_at_solution_is_fixed_point() {
        let reg = ChainRegistry::builtin();
        let mut s = SeedPath::new(1).stream();
        for chain in reg.chains() {
            for _ in 0..20 {
                let q = chain.random_config(&mut s);
                let target = chain.forward_kinematics(&q).unwrap().tip;
                let sol = inverse_kinematics(chain, &target, &q).unwrap();
                assert!(sol.joints.distance(&q) <= 1e-6);
                assert_eq!(sol.attempt, 0);
            }
        }
    }

    #[test]
    fn far_target_is_unreachable() {
        let chain = ChainRegistry::builtin().get("arm-A").unwrap().clone();
        let target = Pose::from_translation(10.0, 0.0, 0.0);
        match inverse_kinematics(&chain, &target, chain.home()) {
            Err(KinematicsError::Unreachable {
                position_error, best, ..
            }) => {
                assert!(position_error > 8.0);
                chain.check(&best).unwrap();
            }
            other => panic!("expected Unreachable, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_from_home_mostly_converges() {
        let reg = ChainRegistry::builtin();
        let mut s = SeedPath::new(2).stream();
        for chain in reg.chains() {
            let mut ok = 0;
            for _ in 0..40 {
                let q = chain.random_config(&mut s);
                let target = chain.forward_kinematics(&q).unwrap().tip;
                if let Ok(sol) = inverse_kinematics(chain, &target, chain.home()) {
                    let tip = chain.forward_kinematics(&sol.joints).unwrap().tip;
                    assert!((tip.translation - target.translation).norm() <= 1e-4);
                    assert!(tip.rotation.angle_to(&target.rotation) <= 1e-3);
                    ok += 1;
                }
            }
            assert!(ok >= 36, "{}: {ok}/40", chain.name());
        }
    }

    #[test]
    fn seeded_solutions_are_continuous() {
        let chain = ChainRegistry::builtin().get("arm-A").unwrap().clone();
        let start = chain.home_pose();
        let mut seed = chain.home().clone();
        for step in 1..=20 {
            let mut target = start;
            target.translation.x += 0.01 * step as f64;
            let sol = inverse_kinematics(&chain, &target, &seed).unwrap();
            assert!(sol.joints.distance(&seed) <= 0.3, "step {step}: {}", sol.joints.distance(&seed));
            seed = sol.joints;
        }
    }

    #[test]
    fn planar_chain_solves_position_in_plane() {
        let chain = crate::kinematics::KinematicChain::planar_two_link(0.3, 0.2);
        let q = JointConfig(vec![0.7, -0.9]);
        let target = chain.forward_kinematics(&q).unwrap().tip;
        let sol = inverse_kinematics(&chain, &target, chain.home()).unwrap();
        let tip = chain.forward_kinematics(&sol.joints).unwrap().tip;
        assert!((tip.translation - target.translation).norm() <= 1e-4);
    }
}
