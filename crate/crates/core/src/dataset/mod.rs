//! Trajectories, datasets, the on-disk format and dataset-level operations.

mod compose;
mod import;
mod io;
mod stats;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{align_action, align_pose, RigidTransform};
use crate::raster::Frame;
use crate::sampler::SeedPath;

pub use compose::{compose_cross_product, CROSS_PRODUCT_ROLES};
pub use import::import_episodes;
pub use io::{dataset_digest, read_dataset, write_dataset, MANIFEST_FILE};
pub use stats::{stats, CellStats, DatasetStats, BRIGHTNESS_BINS};

pub const FORMAT_VERSION: u32 = 1;

/// Camera convention recorded in every manifest.
pub const CAMERA_CONVENTION: &str =
    "pinhole; camera frame +x right, +y down, +z forward; extrinsics camera-to-world; pixel centers at i+0.5";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unsupported dataset format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("trajectory '{0}' not found")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
}

/// One applied processing stage: a name such as `ro-aug:arm-A->arm-B`, the
/// effective configuration, and the seed path its randomness came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub stage: String,
    #[serde(default)]
    pub config: Value,
    #[serde(default)]
    pub seed: Option<SeedPath>,
}

impl ProvenanceEntry {
    pub fn new(stage: impl Into<String>, config: Value, seed: Option<SeedPath>) -> Self {
        Self {
            stage: stage.into(),
            config,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    /// Chain name of the robot visible in the observations.
    pub robot: String,
    pub task: String,
    pub frames: Vec<Frame>,
    /// Append-only.
    pub provenance: Vec<ProvenanceEntry>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| DatasetError::Invalid(format!("trajectory '{}' has no frames", self.id)))?;
        let dims = first.dimensions();
        for (i, f) in self.frames.iter().enumerate() {
            f.validate()
                .map_err(|e| DatasetError::Invalid(format!("trajectory '{}' frame {i}: {e}", self.id)))?;
            if f.dimensions() != dims {
                return Err(DatasetError::Invalid(format!(
                    "trajectory '{}' frame {i} is {:?}, frame 0 is {dims:?}",
                    self.id,
                    f.dimensions()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format_version: u32,
    pub camera_convention: String,
    /// Recorded for consumers; nothing here depends on it.
    pub control_rate_hz: f64,
}

impl Default for DatasetMetadata {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            camera_convention: CAMERA_CONVENTION.to_owned(),
            control_rate_hz: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub trajectories: Vec<Trajectory>,
    pub metadata: DatasetMetadata,
}

impl Dataset {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            trajectories: Vec::new(),
            metadata: DatasetMetadata::default(),
        }
    }

    /// Robot names referenced by any trajectory, sorted.
    pub fn chains(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.trajectories.iter().map(|t| t.robot.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn frame_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.frames.len()).sum()
    }

    pub fn trajectory(&self, id: &str) -> Result<&Trajectory, DatasetError> {
        self.trajectories
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| DatasetError::NotFound(id.to_owned()))
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = HashSet::new();
        for t in &self.trajectories {
            if !ids.insert(t.id.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate trajectory id '{}'", t.id)));
            }
            t.validate()?;
        }
        Ok(())
    }
}

/// Moves every gripper pose and action through `t`; observations are left
/// alone.
pub fn apply_alignment(ds: &Dataset, t: &RigidTransform) -> Dataset {
    let mut out = ds.clone();
    let config = serde_json::json!({ "transform": t.to_array() });
    for traj in &mut out.trajectories {
        for f in &mut traj.frames {
            f.gripper_pose = align_pose(&f.gripper_pose, t);
            f.action = f.action.as_ref().map(|a| align_action(a, t));
        }
        traj.provenance.push(ProvenanceEntry::new("align", config.clone(), None));
    }
    out
}

/// True when `a` and `b` carry the same trajectories with identical poses,
/// actions and frame counts (observations may differ).
pub fn same_non_observation_channels(a: &Trajectory, b: &Trajectory) -> bool {
    a.frames.len() == b.frames.len()
        && a.frames.iter().zip(&b.frames).all(|(x, y)| {
            x.gripper_pose.to_array().map(f64::to_bits) == y.gripper_pose.to_array().map(f64::to_bits)
                && action_bits(x) == action_bits(y)
        })
}

fn action_bits(f: &Frame) -> Option<(crate::geometry::ActionKind, [u64; 7], u64)> {
    f.action
        .as_ref()
        .map(|a| (a.kind, a.pose.to_array().map(f64::to_bits), a.gripper.to_bits()))
}

#[cfg(test)]
pub(crate) mod testutil {
    use image::{Rgb, RgbImage};

    use super::*;
    use crate::camera::{Camera, CameraExtrinsics, CameraIntrinsics};
    use crate::geometry::{Action, Pose, Rotation};
    use crate::raster::{DepthMap, Mask};

    pub fn frame(w: u32, h: u32, k: u32) -> Frame {
        let mut mask = Mask::new(w, h);
        mask.set(k % w, 0, true);
        let depth = DepthMap::from_vec(w, h, (0..w * h).map(|i| 0.5 + i as f32 * 0.01 + k as f32).collect()).unwrap();
        let pose = Pose::new(Rotation::from_euler(0.1 * k as f64, 0.2, -0.3), nalgebra::Vector3::new(0.1, -0.2, 0.3 + k as f64));
        Frame {
            rgb: RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 + k) as u8, (y * 13) as u8, 200])),
            depth,
            mask: Some(mask),
            camera: Camera::new(
                CameraIntrinsics::new(w, h, 55.0).unwrap(),
                CameraExtrinsics::new(Pose::from_translation(0.3, 0.1, 1.0 / 3.0)),
            ),
            gripper_pose: pose,
            action: Some(Action::absolute(pose, 0.25)),
            joints: None,
        }
    }

    pub fn trajectory(id: &str, robot: &str, task: &str, n: u32) -> Trajectory {
        Trajectory {
            id: id.into(),
            robot: robot.into(),
            task: task.into(),
            frames: (0..n).map(|k| frame(6, 4, k)).collect(),
            provenance: vec![ProvenanceEntry::new("synthetic", serde_json::json!({"n": n}), Some(SeedPath::new(7)))],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::trajectory;
    use super::*;
    use crate::geometry::{inverse, Pose, Rotation};

    fn ds() -> Dataset {
        let mut ds = Dataset::new("d");
        ds.trajectories.push(trajectory("a", "arm-A", "t1", 3));
        ds.trajectories.push(trajectory("b", "arm-B", "t1", 2));
        ds
    }

    #[test]
    fn identity_alignment_only_adds_provenance() {
        let d = ds();
        let out = apply_alignment(&d, &Pose::identity());
        for (a, b) in d.trajectories.iter().zip(&out.trajectories) {
            assert_eq!(a.frames, b.frames);
            assert_eq!(b.provenance.len(), a.provenance.len() + 1);
            assert_eq!(b.provenance.last().unwrap().stage, "align");
        }
    }

    #[test]
    fn alignment_round_trip_and_translation() {
        let d = ds();
        let t = Pose::new(Rotation::from_euler(0.3, -0.2, 1.1), nalgebra::Vector3::new(0.5, -0.1, 0.2));
        let back = apply_alignment(&apply_alignment(&d, &t), &inverse(&t));
        for (a, b) in d.trajectories.iter().zip(&back.trajectories) {
            for (x, y) in a.frames.iter().zip(&b.frames) {
                for (p, q) in x.gripper_pose.to_array().iter().zip(y.gripper_pose.to_array()) {
                    assert!((p - q).abs() < 1e-9);
                }
                let (ax, ay) = (x.action.unwrap(), y.action.unwrap());
                assert!((ax.pose.translation - ay.pose.translation).norm() < 1e-9);
                assert!(ax.pose.rotation.angle_to(&ay.pose.rotation) < 1e-9);
            }
        }
        let shift = Pose::from_translation(0.1, 0.2, -0.3);
        let moved = apply_alignment(&d, &shift);
        for (a, b) in d.trajectories.iter().zip(&moved.trajectories) {
            for (x, y) in a.frames.iter().zip(&b.frames) {
                assert_eq!(y.gripper_pose.translation, x.gripper_pose.translation + shift.translation);
                assert_eq!(y.rgb, x.rgb);
            }
        }
    }

    #[test]
    fn validation_rejects_duplicates_and_empty() {
        let mut d = ds();
        d.validate().unwrap();
        d.trajectories.push(trajectory("a", "arm-A", "t2", 1));
        assert!(d.validate().is_err());
        let mut e = ds();
        e.trajectories[0].frames.clear();
        assert!(e.validate().is_err());
        assert_eq!(ds().chains(), ["arm-A", "arm-B"]);
        assert!(matches!(ds().trajectory("zz"), Err(DatasetError::NotFound(_))));
    }
}
