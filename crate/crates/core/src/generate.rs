//! Synthetic data: paired renders of several robots at the same gripper
//! poses, and smooth single-robot demonstrations over a procedural scene.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::{Dataset, ProvenanceEntry, Trajectory};
use crate::geometry::{Action, Pose};
use crate::kinematics::{inverse_kinematics, JointConfig, KinematicChain, KinematicsError};
use crate::raster::{paste_on_background_corpus, render, render_over, Backdrop, BackgroundCorpus, Frame, RasterError};
use crate::sampler::{
    frame_from_approach, sample_camera, sample_robot_pose, CameraSamplerConfig, RobotPoseSamplerConfig, SeedPath,
};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("need at least one robot")]
    NoRobots,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("no reachable demonstration for {robot} after {attempts} attempts")]
    NoDemo { robot: String, attempts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairedConfig {
    pub robot_pose: RobotPoseSamplerConfig,
    pub camera: CameraSamplerConfig,
    pub cameras_per_pose: usize,
    pub task: String,
    /// Brightness range for the pasted variants.
    pub paste_brightness_range: u32,
}

impl Default for PairedConfig {
    fn default() -> Self {
        Self {
            robot_pose: RobotPoseSamplerConfig::default(),
            camera: CameraSamplerConfig::default(),
            cameras_per_pose: 5,
            task: "paired".into(),
            paste_brightness_range: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairedOutput {
    /// One dataset per robot, in input order. Trajectory `pose_NNNNN` holds
    /// the renders of pose N, one frame per camera, and has the same id in
    /// every robot's dataset.
    pub datasets: Vec<Dataset>,
    /// Background-pasted copies of `datasets`, when a corpus was given.
    pub pasted: Vec<Dataset>,
    pub requested: usize,
    /// Poses dropped because at least one robot could not reach them.
    pub skipped: usize,
}

/// Samples `count` gripper poses; every robot solves IK from home for each
/// and is rendered under the same `cameras_per_pose` cameras. A pose that
/// any robot cannot reach is skipped for all of them.
pub fn gen_paired(
    chains: &[&KinematicChain],
    count: usize,
    cfg: &PairedConfig,
    seed: &SeedPath,
    backgrounds: Option<&BackgroundCorpus>,
) -> Result<PairedOutput, GenerateError> {
    if chains.is_empty() {
        return Err(GenerateError::NoRobots);
    }
    let per_pose: Vec<Option<Vec<Vec<Frame>>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let pose = sample_robot_pose(&cfg.robot_pose, &mut seed.child("paired-pose", 0, i as u64).stream());
            let mut solutions = Vec::with_capacity(chains.len());
            for chain in chains {
                match inverse_kinematics(chain, &pose, chain.home()) {
                    Ok(sol) => solutions.push(sol.joints),
                    Err(KinematicsError::Unreachable { .. }) => return Ok(None),
                    Err(e) => return Err(GenerateError::from(e)),
                }
            }
            let cameras: Vec<_> = (0..cfg.cameras_per_pose)
                .map(|j| {
                    let mut s = seed.child("paired-camera", i as u64, j as u64).stream();
                    sample_camera(&cfg.camera, &pose.translation, &mut s)
                })
                .collect();
            let mut per_robot = Vec::with_capacity(chains.len());
            for (chain, q) in chains.iter().zip(&solutions) {
                let frames = cameras
                    .iter()
                    .map(|cam| {
                        let mut f = render(chain, q, cam)?;
                        f.gripper_pose = pose;
                        Ok(f)
                    })
                    .collect::<Result<Vec<_>, GenerateError>>()?;
                per_robot.push(frames);
            }
            Ok(Some(per_robot))
        })
        .collect::<Result<_, GenerateError>>()?;

    let skipped = per_pose.iter().filter(|p| p.is_none()).count();
    let mut datasets: Vec<Dataset> = chains.iter().map(|c| Dataset::new(c.name())).collect();
    let provenance = ProvenanceEntry::new(
        "gen-paired",
        json!({ "config": cfg, "robots": chains.iter().map(|c| c.name()).collect::<Vec<_>>() }),
        Some(seed.clone()),
    );
    for (i, entry) in per_pose.into_iter().enumerate() {
        let Some(per_robot) = entry else { continue };
        for ((ds, chain), frames) in datasets.iter_mut().zip(chains).zip(per_robot) {
            ds.trajectories.push(Trajectory {
                id: format!("pose_{i:05}"),
                robot: chain.name().to_owned(),
                task: cfg.task.clone(),
                frames,
                provenance: vec![provenance.clone()],
            });
        }
    }

    let mut pasted = Vec::new();
    if let Some(corpus) = backgrounds {
        for (r, ds) in datasets.iter().enumerate() {
            let mut out = Dataset::new(format!("{}-pasted", ds.name));
            for t in &ds.trajectories {
                let key = t.id.trim_start_matches("pose_").parse::<u64>().unwrap_or(0);
                let paste_seed = seed.child("paired-paste", r as u64, 0);
                let frames = paste_on_background_corpus(&t.frames, corpus, &paste_seed, key, cfg.paste_brightness_range)?
                    .into_iter()
                    .map(|(f, _)| f)
                    .collect();
                let mut provenance = t.provenance.clone();
                provenance.push(ProvenanceEntry::new(
                    "paste",
                    json!({ "brightness_range": cfg.paste_brightness_range, "corpus_size": corpus.len() }),
                    Some(paste_seed),
                ));
                out.trajectories.push(Trajectory {
                    frames,
                    provenance,
                    ..t.clone()
                });
            }
            pasted.push(out);
        }
    }
    Ok(PairedOutput {
        datasets,
        pasted,
        requested: count,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub frames: usize,
    /// Start and end gripper positions are drawn from this box.
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    /// Largest roll change over the whole demonstration (rad).
    pub roll_span: f64,
    pub camera: CameraSamplerConfig,
    pub backdrop: Backdrop,
    pub task: String,
    /// Re-draws allowed when a path is not reachable.
    pub attempts: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            box_min: [-0.2, -0.15, 0.8],
            box_max: [0.0, 0.15, 1.0],
            roll_span: 0.6,
            camera: CameraSamplerConfig {
                radius: crate::sampler::Gaussian { mean: 1.6, std: 0.1 },
                zenith: crate::sampler::Gaussian {
                    mean: std::f64::consts::FRAC_PI_3,
                    std: 0.15,
                },
                azimuth_range: [-0.6, 0.6],
                fov_range_deg: [50.0, 60.0],
                ..CameraSamplerConfig::default()
            },
            backdrop: Backdrop::default(),
            task: "demo".into(),
            attempts: 16,
        }
    }
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

fn try_demo(chain: &KinematicChain, cfg: &DemoConfig, seed: &SeedPath) -> Option<(Vec<JointConfig>, Vec<Pose>, crate::camera::Camera)> {
    let mut s = seed.stream();
    let mut point = || Vector3::from_fn(|i, _| s.random_range(cfg.box_min[i]..=cfg.box_max[i]));
    let (p0, p1) = (point(), point());
    let roll0 = s.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let roll1 = roll0 + s.random_range(-cfg.roll_span..=cfg.roll_span);
    let mid = (p0 + p1) / 2.0;
    let camera = sample_camera(&cfg.camera, &mid, &mut s);

    let n = cfg.frames.max(1);
    let mut seed_q = chain.home().clone();
    let mut joints = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let t = if n == 1 { 0.0 } else { smoothstep(k as f64 / (n - 1) as f64) };
        let rot = frame_from_approach(&-Vector3::z(), roll0 + (roll1 - roll0) * t);
        let target = Pose::new(rot, p0 + (p1 - p0) * t);
        let sol = inverse_kinematics(chain, &target, &seed_q).ok()?;
        poses.push(chain.forward_kinematics(&sol.joints).ok()?.tip);
        seed_q = sol.joints.clone();
        joints.push(sol.joints);
    }
    Some((joints, poses, camera))
}

/// A straight-line, constant-orientation-family gripper motion tracked by
/// IK, rendered under one static camera over `cfg.backdrop`. Gripper poses
/// are the forward kinematics of the recorded joints; each action targets
/// the next frame's pose, with the gripper closing halfway through.
pub fn gen_demo(chain: &KinematicChain, id: &str, cfg: &DemoConfig, seed: &SeedPath) -> Result<Trajectory, GenerateError> {
    for attempt in 0..cfg.attempts.max(1) {
        let Some((joints, poses, camera)) = try_demo(chain, cfg, &seed.child("demo-attempt", 0, attempt as u64)) else {
            continue;
        };
        let plate = cfg.backdrop.render(&camera);
        let n = joints.len();
        let frames = joints
            .par_iter()
            .enumerate()
            .map(|(k, q)| {
                let mut f = render_over(chain, q, &camera, &plate)?;
                let next = (k + 1).min(n - 1);
                let gripper = if next * 2 >= n { 1.0 } else { 0.0 };
                f.gripper_pose = poses[k];
                f.action = Some(Action::absolute(poses[next], gripper));
                Ok(f)
            })
            .collect::<Result<Vec<_>, RasterError>>()?;
        return Ok(Trajectory {
            id: id.to_owned(),
            robot: chain.name().to_owned(),
            task: cfg.task.clone(),
            frames,
            provenance: vec![ProvenanceEntry::new(
                "gen-demo",
                json!({ "config": cfg, "attempt": attempt }),
                Some(seed.clone()),
            )],
        });
    }
    Err(GenerateError::NoDemo {
        robot: chain.name().to_owned(),
        attempts: cfg.attempts,
    })
}

/// `count` demonstrations named `demo_NNNNN`, each from
/// `seed.child("demo", i, 0)`.
pub fn gen_demo_dataset(
    chain: &KinematicChain,
    name: &str,
    count: usize,
    cfg: &DemoConfig,
    seed: &SeedPath,
) -> Result<Dataset, GenerateError> {
    let trajectories = (0..count)
        .into_par_iter()
        .map(|i| gen_demo(chain, &format!("demo_{i:05}"), cfg, &seed.child("demo", i as u64, 0)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        trajectories,
        ..Dataset::new(name)
    })
}
