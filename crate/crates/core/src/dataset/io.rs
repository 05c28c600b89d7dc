//! On-disk layout.
//!
//! ```text
//! <root>/manifest.json            written last; lists every file with its SHA-256
//! <root>/traj_00000/trajectory.json
//! <root>/traj_00000/000000.rgb.png
//! <root>/traj_00000/000000.depth  DPTH blob
//! <root>/traj_00000/000000.mask.png (only when the frame has a mask)
//! ```
//!
//! `trajectory.json` holds the id, robot, task, provenance and one record per
//! frame (camera, gripper pose as `[tx,ty,tz,qw,qx,qy,qz]`, action, joints).

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetError, DatasetMetadata, ProvenanceEntry, Trajectory, FORMAT_VERSION};
use crate::camera::Camera;
use crate::geometry::{Action, Pose};
use crate::kinematics::JointConfig;
use crate::raster::{DepthMap, Frame, Mask};

pub const MANIFEST_FILE: &str = "manifest.json";
const TRAJECTORY_FILE: &str = "trajectory.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    name: String,
    metadata: DatasetMetadata,
    chains: Vec<String>,
    trajectories: Vec<ManifestEntry>,
    /// Relative path -> hex SHA-256.
    files: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    dir: String,
    frames: usize,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    id: String,
    robot: String,
    task: String,
    provenance: Vec<ProvenanceEntry>,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    camera: Camera,
    gripper_pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joints: Option<JointConfig>,
    has_mask: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn rgb_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}

fn gray_png(img: &GrayImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}

/// Files of one trajectory directory, relative name -> bytes.
fn trajectory_files(traj: &Trajectory) -> Result<Vec<(String, Vec<u8>)>, DatasetError> {
    let mut files = Vec::with_capacity(traj.frames.len() * 3 + 1);
    let mut records = Vec::with_capacity(traj.frames.len());
    for (i, f) in traj.frames.iter().enumerate() {
        files.push((format!("{i:06}.rgb.png"), rgb_png(&f.rgb)));
        files.push((format!("{i:06}.depth"), f.depth.encode()?));
        if let Some(m) = &f.mask {
            files.push((format!("{i:06}.mask.png"), gray_png(&m.to_image())));
        }
        records.push(FrameRecord {
            camera: f.camera,
            gripper_pose: f.gripper_pose,
            action: f.action,
            joints: f.joints.clone(),
            has_mask: f.mask.is_some(),
        });
    }
    let record = TrajectoryRecord {
        id: traj.id.clone(),
        robot: traj.robot.clone(),
        task: traj.task.clone(),
        provenance: traj.provenance.clone(),
        frames: records,
    };
    let json = serde_json::to_vec_pretty(&record).expect("trajectory record serializes");
    files.push((TRAJECTORY_FILE.to_owned(), json));
    Ok(files)
}

/// Writes `ds` under `root`, which must not exist yet or be empty. The
/// manifest goes last, so a directory without one is an incomplete write.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<(), DatasetError> {
    ds.validate()?;
    if root.exists() && std::fs::read_dir(root).map_err(io_err(root))?.next().is_some() {
        return Err(DatasetError::Invalid(format!("{} exists and is not empty", root.display())));
    }
    std::fs::create_dir_all(root).map_err(io_err(root))?;

    let per_traj: Vec<(ManifestEntry, Vec<(String, String)>)> = ds
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let dir = format!("traj_{i:05}");
            let dir_path = root.join(&dir);
            std::fs::create_dir(&dir_path).map_err(io_err(&dir_path))?;
            let mut sums = Vec::new();
            for (name, bytes) in trajectory_files(traj)? {
                let path = dir_path.join(&name);
                std::fs::write(&path, &bytes).map_err(io_err(&path))?;
                sums.push((format!("{dir}/{name}"), sha256_hex(&bytes)));
            }
            let entry = ManifestEntry {
                id: traj.id.clone(),
                dir,
                frames: traj.frames.len(),
            };
            Ok((entry, sums))
        })
        .collect::<Result<_, DatasetError>>()?;

    let mut manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: ds.name.clone(),
        metadata: ds.metadata.clone(),
        chains: ds.chains(),
        trajectories: Vec::with_capacity(per_traj.len()),
        files: BTreeMap::new(),
    };
    for (entry, sums) in per_traj {
        manifest.trajectories.push(entry);
        manifest.files.extend(sums);
    }
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(io_err(&path))
}

fn read_checked(root: &Path, rel: &str, sums: &BTreeMap<String, String>) -> Result<Vec<u8>, DatasetError> {
    let expected = sums
        .get(rel)
        .ok_or_else(|| DatasetError::Invalid(format!("{rel} is not listed in the manifest")))?;
    let path = root.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::MissingFile(rel.to_owned()),
        _ => io_err(&path)(e),
    })?;
    if &sha256_hex(&bytes) != expected {
        return Err(DatasetError::Checksum(rel.to_owned()));
    }
    Ok(bytes)
}

fn decode_png(rel: &str, bytes: &[u8]) -> Result<image::DynamicImage, DatasetError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| DatasetError::Parse {
        path: rel.to_owned(),
        message: e.to_string(),
    })
}

fn read_trajectory(root: &Path, dir: &str, sums: &BTreeMap<String, String>) -> Result<Trajectory, DatasetError> {
    let rel = format!("{dir}/{TRAJECTORY_FILE}");
    let record: TrajectoryRecord =
        serde_json::from_slice(&read_checked(root, &rel, sums)?).map_err(|e| DatasetError::Parse {
            path: rel.clone(),
            message: e.to_string(),
        })?;
    let frames = record
        .frames
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| {
            let rgb_rel = format!("{dir}/{i:06}.rgb.png");
            let rgb = decode_png(&rgb_rel, &read_checked(root, &rgb_rel, sums)?)?.to_rgb8();
            let depth_rel = format!("{dir}/{i:06}.depth");
            let depth = DepthMap::decode(&read_checked(root, &depth_rel, sums)?).map_err(|e| DatasetError::Parse {
                path: depth_rel,
                message: e.to_string(),
            })?;
            let mask = if r.has_mask {
                let mask_rel = format!("{dir}/{i:06}.mask.png");
                let img = decode_png(&mask_rel, &read_checked(root, &mask_rel, sums)?)?.to_luma8();
                Some(Mask::from_image(&img))
            } else {
                None
            };
            Ok(Frame {
                rgb,
                depth,
                mask,
                camera: r.camera,
                gripper_pose: r.gripper_pose,
                action: r.action,
                joints: r.joints,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let traj = Trajectory {
        id: record.id,
        robot: record.robot,
        task: record.task,
        frames,
        provenance: record.provenance,
    };
    traj.validate()?;
    Ok(traj)
}

/// Reads a dataset written by [`write_dataset`], verifying the format
/// version and every file checksum.
pub fn read_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| DatasetError::Parse {
        path: MANIFEST_FILE.into(),
        message: e.to_string(),
    })?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(DatasetError::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| DatasetError::Parse {
        path: MANIFEST_FILE.into(),
        message: e.to_string(),
    })?;
    let trajectories = manifest
        .trajectories
        .par_iter()
        .map(|entry| {
            let t = read_trajectory(root, &entry.dir, &manifest.files)?;
            if t.id != entry.id || t.frames.len() != entry.frames {
                return Err(DatasetError::Invalid(format!(
                    "{} does not match its manifest entry",
                    entry.dir
                )));
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let ds = Dataset {
        name: manifest.name,
        trajectories,
        metadata: manifest.metadata,
    };
    ds.validate()?;
    Ok(ds)
}

/// Hex SHA-256 of the manifest. Because the manifest lists a checksum for
/// every file, this identifies the whole dataset.
pub fn dataset_digest(root: &Path) -> Result<String, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    Ok(sha256_hex(&std::fs::read(&path).map_err(io_err(&path))?))
}
