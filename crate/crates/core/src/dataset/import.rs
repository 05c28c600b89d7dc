//! Import of a simplified OXE-style episode layout:
//!
//! ```text
//! <root>/<episode>/meta.json      {"robot", "task", "camera": {"width", "height", "fov_deg", "pose": [7]}}
//! <root>/<episode>/poses.csv      header tx,ty,tz,qw,qx,qy,qz,gripper; one row per image
//! <root>/<episode>/images/*.png   sorted by file name
//! <root>/<episode>/depth/*.depth  optional, DPTH blobs matching the images
//! ```
//!
//! Each frame's action is an absolute target at the next row's pose and
//! gripper value; the last frame targets its own pose.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;

use super::{Dataset, DatasetError, ProvenanceEntry, Trajectory};
use crate::camera::{Camera, CameraExtrinsics, CameraIntrinsics};
use crate::geometry::{Action, Pose};
use crate::raster::{DepthMap, Frame};

#[derive(Deserialize)]
struct EpisodeMeta {
    robot: String,
    task: String,
    camera: CameraMeta,
}

#[derive(Deserialize)]
struct CameraMeta {
    width: u32,
    height: u32,
    fov_deg: f64,
    pose: [f64; 7],
}

#[derive(Deserialize)]
struct PoseRow {
    tx: f64,
    ty: f64,
    tz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    gripper: f64,
}

fn parse_err(path: &Path, message: impl ToString) -> DatasetError {
    DatasetError::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| DatasetError::Io {
            path: dir.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn import_episode(dir: &Path) -> Result<Trajectory, DatasetError> {
    let meta_path = dir.join("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|_| DatasetError::MissingFile(meta_path.display().to_string()))?;
    let meta: EpisodeMeta = serde_json::from_str(&meta_text).map_err(|e| parse_err(&meta_path, e))?;
    let intr = CameraIntrinsics::new(meta.camera.width, meta.camera.height, meta.camera.fov_deg)
        .map_err(|e| parse_err(&meta_path, e))?;
    let extr = CameraExtrinsics::new(Pose::from_array(meta.camera.pose).map_err(|e| parse_err(&meta_path, e))?);
    let camera = Camera::new(intr, extr);

    let csv_path = dir.join("poses.csv");
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| parse_err(&csv_path, e))?;
    let rows: Vec<PoseRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| parse_err(&csv_path, e))?;
    let poses = rows
        .iter()
        .map(|r| Pose::from_array([r.tx, r.ty, r.tz, r.qw, r.qx, r.qy, r.qz]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| parse_err(&csv_path, e))?;

    let images = sorted_files(&dir.join("images"), "png")?;
    if images.len() != rows.len() || images.is_empty() {
        return Err(DatasetError::Invalid(format!(
            "{}: {} images for {} pose rows",
            dir.display(),
            images.len(),
            rows.len()
        )));
    }
    let depths = sorted_files(&dir.join("depth"), "depth")?;
    if !depths.is_empty() && depths.len() != images.len() {
        return Err(DatasetError::Invalid(format!(
            "{}: {} depth files for {} images",
            dir.display(),
            depths.len(),
            images.len()
        )));
    }

    let mut frames = Vec::with_capacity(images.len());
    for (i, path) in images.iter().enumerate() {
        let rgb = image::open(path).map_err(|e| parse_err(path, e))?.to_rgb8();
        if rgb.dimensions() != (meta.camera.width, meta.camera.height) {
            return Err(parse_err(path, "image size differs from meta.json camera"));
        }
        let depth = match depths.get(i) {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|source| DatasetError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                DepthMap::decode(&bytes).map_err(|e| parse_err(p, e))?
            }
            None => DepthMap::new(rgb.width(), rgb.height()),
        };
        let next = (i + 1).min(rows.len() - 1);
        let action = Action::absolute(poses[next], rows[next].gripper);
        if !action.is_valid() {
            return Err(parse_err(&csv_path, format!("row {next}: gripper outside [0, 1]")));
        }
        frames.push(Frame {
            rgb,
            depth,
            mask: None,
            camera,
            gripper_pose: poses[i],
            action: Some(action),
            joints: None,
        });
    }
    let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let traj = Trajectory {
        id,
        robot: meta.robot,
        task: meta.task,
        frames,
        provenance: vec![ProvenanceEntry::new("import", json!({ "source": dir.display().to_string() }), None)],
    };
    traj.validate()?;
    Ok(traj)
}

/// Imports every episode directory under `root` (sorted by name).
pub fn import_episodes(root: &Path, name: &str) -> Result<Dataset, DatasetError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|source| DatasetError::Io {
            path: root.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut ds = Dataset::new(name);
    for d in dirs {
        ds.trajectories.push(import_episode(&d)?);
    }
    ds.validate()?;
    Ok(ds)
}
