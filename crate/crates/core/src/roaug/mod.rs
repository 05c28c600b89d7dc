//! Robot augmentation: segment the source robot, inpaint the background
//! over the whole trajectory, render the target robot at the same gripper
//! poses and paste it back with a random brightness shift.

mod stages;

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::{ProvenanceEntry, Trajectory};
use crate::kinematics::{JointConfig, KinematicChain};
use crate::raster::{composite, BackgroundPlate, Frame, Mask};
use crate::sampler::{sample_brightness_delta, stable_key, SeedPath};

pub use stages::{
    plate_inpaint, GeometricTranslator, Inpainter, OracleSegmenter, PlateInpainter, RobotLayer, RobotTranslator,
    Segmenter, StageError,
};

/// Seed-path stage name for brightness deltas.
pub const BRIGHTNESS_STAGE: &str = "ro-aug";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoAugConfig {
    /// Brightness deltas are uniform integers in `[-range, range]`.
    pub brightness_range: u32,
    /// Abort on the first frame the translator fails on.
    pub strict: bool,
    /// Hide target-robot pixels behind observed (non-hole) scene depth.
    pub occlude_with_scene_depth: bool,
}

impl Default for RoAugConfig {
    fn default() -> Self {
        Self {
            brightness_range: 30,
            strict: false,
            occlude_with_scene_depth: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum RoAugError {
    #[error("trajectory '{trajectory}' shows {found}, expected source robot {expected}")]
    WrongSource {
        trajectory: String,
        found: String,
        expected: String,
    },
    #[error("trajectory '{trajectory}' frame {frame}: {source}")]
    Stage {
        trajectory: String,
        frame: usize,
        #[source]
        source: StageError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub translated: bool,
    pub position_error: Option<f64>,
    pub rotation_error: Option<f64>,
    pub brightness_delta: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoAugReport {
    pub trajectory: String,
    pub source: String,
    pub target: String,
    pub frames: Vec<FrameReport>,
    pub translated: usize,
    pub failed: usize,
}

/// The three pluggable stages.
#[derive(Clone)]
pub struct RoAugStages {
    pub segmenter: Arc<dyn Segmenter>,
    pub translator: Arc<dyn RobotTranslator>,
    pub inpainter: Arc<dyn Inpainter>,
}

impl Default for RoAugStages {
    fn default() -> Self {
        Self {
            segmenter: Arc::new(OracleSegmenter),
            translator: Arc::new(GeometricTranslator::default()),
            inpainter: Arc::new(PlateInpainter),
        }
    }
}

impl std::fmt::Debug for RoAugStages {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RoAugStages")
            .field("segmenter", &self.segmenter.name())
            .field("translator", &self.translator.name())
            .field("inpainter", &self.inpainter.name())
            .finish()
    }
}

/// Brightness delta for frame `frame` of trajectory `id`.
pub fn brightness_delta(seed: &SeedPath, id: &str, frame: usize, range: u32) -> i32 {
    let mut stream = seed.child(BRIGHTNESS_STAGE, stable_key(id), frame as u64).stream();
    sample_brightness_delta(range, &mut stream)
}

/// Drops layer pixels that sit behind observed scene depth. Hole pixels
/// never occlude, since their depth was inpainted rather than observed.
fn occluded_mask(layer: &RobotLayer, background: &Frame, hole: &Mask) -> Mask {
    let mut mask = layer.mask.clone();
    let (w, _) = mask.dimensions();
    for (i, m) in mask.as_mut_slice().iter_mut().enumerate() {
        if !*m || hole.as_slice()[i] {
            continue;
        }
        let (x, y) = (i as u32 % w, i as u32 / w);
        let scene = background.depth.get(x, y);
        if scene > 0.0 && scene <= layer.depth.get(x, y) {
            *m = false;
        }
    }
    mask
}

/// Replaces the source robot in every frame of `traj` with `target`.
///
/// Poses, actions and frame order are copied unchanged; joints become the
/// target's solution. A frame the translator fails on keeps the inpainted
/// background with an empty mask and is flagged in the report, unless
/// `cfg.strict` is set.
pub fn ro_aug(
    traj: &Trajectory,
    source: &KinematicChain,
    target: &KinematicChain,
    cfg: &RoAugConfig,
    stages: &RoAugStages,
    seed: &SeedPath,
) -> Result<(Trajectory, RoAugReport), RoAugError> {
    if traj.robot != source.name() {
        return Err(RoAugError::WrongSource {
            trajectory: traj.id.clone(),
            found: traj.robot.clone(),
            expected: source.name().to_owned(),
        });
    }
    let stage_err = |frame: usize| {
        let id = traj.id.clone();
        move |source: StageError| RoAugError::Stage {
            trajectory: id,
            frame,
            source,
        }
    };

    let holes = traj
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| stages.segmenter.segment(f, source).map_err(stage_err(i)))
        .collect::<Result<Vec<Mask>, _>>()?;
    let backgrounds = stages.inpainter.inpaint(&traj.frames, &holes).map_err(stage_err(0))?;

    // Sequential: each frame's IK is seeded by the previous solution.
    let mut layers = Vec::with_capacity(traj.frames.len());
    let mut previous: Option<JointConfig> = None;
    for (i, f) in traj.frames.iter().enumerate() {
        match stages.translator.translate(f, source, target, previous.as_ref()) {
            Ok(layer) => {
                if layer.joints.is_some() {
                    previous = layer.joints.clone();
                }
                layers.push(Ok(layer));
            }
            Err(e) if cfg.strict => return Err(stage_err(i)(e)),
            Err(e) => {
                warn!("{}: frame {i}: translation failed: {e}", traj.id);
                layers.push(Err(e));
            }
        }
    }

    let results = traj
        .frames
        .par_iter()
        .zip(backgrounds.par_iter())
        .zip(holes.par_iter())
        .zip(layers.into_par_iter())
        .enumerate()
        .map(|(i, (((src, bg), hole), layer))| {
            let delta = brightness_delta(seed, &traj.id, i, cfg.brightness_range);
            match layer {
                Ok(layer) => {
                    let mask = if cfg.occlude_with_scene_depth {
                        occluded_mask(&layer, bg, hole)
                    } else {
                        layer.mask.clone()
                    };
                    let fg = Frame {
                        rgb: layer.rgb,
                        depth: layer.depth,
                        mask: Some(mask),
                        camera: src.camera,
                        gripper_pose: src.gripper_pose,
                        action: src.action,
                        joints: layer.joints,
                    };
                    let plate = BackgroundPlate {
                        rgb: bg.rgb.clone(),
                        depth: Some(bg.depth.clone()),
                    };
                    let out = composite(&fg, &plate, delta).map_err(|e| stage_err(i)(e.into()))?;
                    let report = FrameReport {
                        frame: i,
                        translated: true,
                        position_error: Some(layer.position_error),
                        rotation_error: Some(layer.rotation_error),
                        brightness_delta: delta,
                        error: None,
                    };
                    Ok((out, report))
                }
                Err(e) => {
                    let (w, h) = src.dimensions();
                    let out = Frame {
                        mask: Some(Mask::new(w, h)),
                        joints: None,
                        ..bg.clone()
                    };
                    let (position_error, rotation_error) = match &e {
                        StageError::Kinematics(crate::kinematics::KinematicsError::Unreachable {
                            position_error,
                            rotation_error,
                            ..
                        }) => (Some(*position_error), Some(*rotation_error)),
                        _ => (None, None),
                    };
                    let report = FrameReport {
                        frame: i,
                        translated: false,
                        position_error,
                        rotation_error,
                        brightness_delta: delta,
                        error: Some(e.to_string()),
                    };
                    Ok((out, report))
                }
            }
        })
        .collect::<Result<Vec<_>, RoAugError>>()?;

    let (frames, reports): (Vec<Frame>, Vec<FrameReport>) = results.into_iter().unzip();
    let translated = reports.iter().filter(|r| r.translated).count();
    let mut provenance = traj.provenance.clone();
    provenance.push(ProvenanceEntry::new(
        format!("ro-aug:{}->{}", source.name(), target.name()),
        json!({
            "config": cfg,
            "segmenter": stages.segmenter.name(),
            "translator": stages.translator.name(),
            "inpainter": stages.inpainter.name(),
        }),
        Some(seed.clone()),
    ));
    let report = RoAugReport {
        trajectory: traj.id.clone(),
        source: source.name().to_owned(),
        target: target.name().to_owned(),
        translated,
        failed: reports.len() - translated,
        frames: reports,
    };
    let out = Trajectory {
        id: traj.id.clone(),
        robot: target.name().to_owned(),
        task: traj.task.clone(),
        frames,
        provenance,
    };
    Ok((out, report))
}
