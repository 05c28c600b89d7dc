//! Viewpoint augmentation: sample a camera-frame rigid perturbation and
//! synthesize the frame as seen from the perturbed camera.
//!
//! The default synthesizer forward-warps pixels using their depth. If the
//! original camera-to-world pose is `E` and the perturbation `P`, the new
//! camera is `E ∘ P`, and a camera-frame point `p` moves to `P⁻¹ p`.

use std::collections::VecDeque;

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::camera::NEAR_PLANE;
use crate::dataset::{ProvenanceEntry, Trajectory};
use crate::geometry::RigidTransform;
use crate::raster::{DepthMap, Frame, Mask};
use crate::sampler::{sample_view_perturbation, stable_key, PerturbationMode, SeedPath, ViAugConfig, ViewPerturbation};

pub const VIAUG_STAGE: &str = "vi-aug";

#[derive(Debug, Error)]
pub enum ViAugError {
    #[error("frame has no valid depth")]
    NoValidDepth,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trajectory '{trajectory}' frame {frame}: {message}")]
    Frame {
        trajectory: String,
        frame: usize,
        message: String,
    },
}

/// Pixels of a synthesized view that no source pixel landed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoleMap(pub Mask);

impl HoleMap {
    pub fn count(&self) -> usize {
        self.0.count()
    }

    pub fn fraction(&self) -> f64 {
        let (w, h) = self.0.dimensions();
        self.count() as f64 / (w as f64 * h as f64).max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HoleFill {
    /// Copy the color of the nearest written pixel (4-connected BFS).
    #[default]
    Nearest,
    /// Leave holes black.
    Black,
}

pub trait ViewSynthesizer: Send + Sync {
    fn name(&self) -> &str;
    fn synthesize(&self, frame: &Frame, perturbation: &RigidTransform) -> Result<(Frame, HoleMap), ViAugError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Reprojector {
    pub fill: HoleFill,
    /// Warp pixels without depth as points at infinity (rotation only)
    /// instead of dropping them. They lose every depth test.
    pub warp_invalid_at_infinity: bool,
}

impl Default for Reprojector {
    fn default() -> Self {
        Self {
            fill: HoleFill::Nearest,
            warp_invalid_at_infinity: true,
        }
    }
}

/// Output of [`reproject`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reprojection {
    pub frame: Frame,
    pub holes: HoleMap,
    /// Row-major source pixel index for every written output pixel.
    pub source: Vec<Option<u32>>,
}

impl ViewSynthesizer for Reprojector {
    fn name(&self) -> &str {
        "reproject"
    }

    fn synthesize(&self, frame: &Frame, perturbation: &RigidTransform) -> Result<(Frame, HoleMap), ViAugError> {
        let r = reproject(frame, perturbation, self)?;
        Ok((r.frame, r.holes))
    }
}

/// Forward-warps `frame` into the camera perturbed by `perturbation`.
/// A z-buffer keeps the nearest point per output pixel; ties keep the
/// earlier source pixel in row-major order.
pub fn reproject(frame: &Frame, perturbation: &RigidTransform, opts: &Reprojector) -> Result<Reprojection, ViAugError> {
    let intr = &frame.camera.intrinsics;
    let (w, h) = frame.dimensions();
    if !opts.warp_invalid_at_infinity && frame.depth.valid_count() == 0 {
        return Err(ViAugError::NoValidDepth);
    }
    let inv = perturbation.inverse();
    let n = (w * h) as usize;
    let mut zbuf = vec![f64::INFINITY; n];
    let mut source: Vec<Option<u32>> = vec![None; n];
    let mut new_depth = vec![0.0f32; n];

    let mut write = |u: f64, v: f64, z: f64, depth: f32, src: usize| {
        if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
            return;
        }
        let j = (v.floor() as u32 * w + u.floor() as u32) as usize;
        if z < zbuf[j] || (zbuf[j] == f64::INFINITY && z == f64::INFINITY && source[j].is_none()) {
            zbuf[j] = z;
            source[j] = Some(src as u32);
            new_depth[j] = depth;
        }
    };

    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = frame.depth.get(x, y);
            if d > 0.0 {
                let p = intr.unproject_camera(u, v, d as f64).expect("positive depth");
                let q = inv.transform_point(&p);
                if q.z <= NEAR_PLANE {
                    continue;
                }
                let (u2, v2) = intr.project_camera(&q).expect("in front of camera");
                write(u2, v2, q.z, q.z as f32, i);
            } else if opts.warp_invalid_at_infinity {
                let dir: Vector3<f64> = inv.rotation.apply(&intr.ray(u, v));
                if dir.z <= NEAR_PLANE {
                    continue;
                }
                let (u2, v2) = intr.project_camera(&dir).expect("in front of camera");
                write(u2, v2, f64::INFINITY, 0.0, i);
            }
        }
    }

    let mut rgb = RgbImage::new(w, h);
    let mut mask = frame.mask.as_ref().map(|_| Mask::new(w, h));
    let mut holes = Mask::new(w, h);
    for (j, s) in source.iter().enumerate() {
        let (x, y) = (j as u32 % w, j as u32 / w);
        match s {
            Some(s) => {
                let (sx, sy) = (s % w, s / w);
                rgb.put_pixel(x, y, *frame.rgb.get_pixel(sx, sy));
                if let (Some(out), Some(src)) = (mask.as_mut(), frame.mask.as_ref()) {
                    out.set(x, y, src.get(sx, sy));
                }
            }
            None => holes.set(x, y, true),
        }
    }
    if opts.fill == HoleFill::Nearest {
        fill_nearest(&mut rgb, &holes);
    }
    let out = Frame {
        rgb,
        depth: DepthMap::from_vec(w, h, new_depth).expect("sizes match"),
        mask,
        camera: crate::camera::Camera::new(*intr, frame.camera.extrinsics.perturbed(perturbation)),
        gripper_pose: frame.gripper_pose,
        action: frame.action,
        joints: frame.joints.clone(),
    };
    Ok(Reprojection {
        frame: out,
        holes: HoleMap(holes),
        source,
    })
}

fn fill_nearest(rgb: &mut RgbImage, holes: &Mask) {
    let (w, h) = rgb.dimensions();
    let n = (w * h) as usize;
    let mut color: Vec<Option<[u8; 3]>> = (0..n)
        .map(|i| (!holes.as_slice()[i]).then(|| rgb.get_pixel(i as u32 % w, i as u32 / w).0))
        .collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| color[i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i as u32 % w, i as u32 / w);
        let c = color[i];
        let neighbors = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w as usize),
            (y + 1 < h).then(|| i + w as usize),
        ];
        for j in neighbors.into_iter().flatten() {
            if color[j].is_none() {
                color[j] = c;
                rgb.put_pixel(j as u32 % w, j as u32 / w, Rgb(c.expect("queued pixels have a color")));
                queue.push_back(j);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViAugReport {
    pub trajectory: String,
    pub mode: PerturbationMode,
    /// One entry per frame.
    pub perturbations: Vec<ViewPerturbation>,
    pub hole_fraction: Vec<f64>,
}

impl ViAugReport {
    pub fn distinct_perturbations(&self) -> usize {
        let mut seen: Vec<&ViewPerturbation> = Vec::new();
        for p in &self.perturbations {
            if !seen.contains(&p) {
                seen.push(p);
            }
        }
        seen.len()
    }
}

/// Per-frame perturbations for a trajectory: one draw from
/// `seed.child("vi-aug", key(id), 0)` shared by all frames in consistent
/// mode, or a draw from `seed.child("vi-aug", key(id), i)` per frame.
pub fn sample_perturbations(cfg: &ViAugConfig, seed: &SeedPath, id: &str, frames: usize) -> Vec<ViewPerturbation> {
    let key = stable_key(id);
    match cfg.mode {
        PerturbationMode::Consistent => {
            let p = sample_view_perturbation(cfg, &mut seed.child(VIAUG_STAGE, key, 0).stream());
            vec![p; frames]
        }
        PerturbationMode::Inconsistent => (0..frames)
            .map(|i| sample_view_perturbation(cfg, &mut seed.child(VIAUG_STAGE, key, i as u64).stream()))
            .collect(),
    }
}

/// Replaces every frame with its synthesized perturbed view. Poses,
/// actions and joints are copied unchanged; camera extrinsics become
/// `extr ∘ P`.
pub fn vi_aug(
    traj: &Trajectory,
    cfg: &ViAugConfig,
    synth: &dyn ViewSynthesizer,
    seed: &SeedPath,
) -> Result<(Trajectory, ViAugReport), ViAugError> {
    cfg.validate().map_err(|e| ViAugError::Config(e.to_string()))?;
    let perturbations = sample_perturbations(cfg, seed, &traj.id, traj.frames.len());
    for p in &perturbations {
        assert!(p.within(cfg), "sampled perturbation {p:?} outside configured ranges");
    }
    let results = traj
        .frames
        .par_iter()
        .zip(&perturbations)
        .enumerate()
        .map(|(i, (f, p))| {
            synth.synthesize(f, &p.transform()).map_err(|e| ViAugError::Frame {
                trajectory: traj.id.clone(),
                frame: i,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (frames, holes): (Vec<Frame>, Vec<HoleMap>) = results.into_iter().unzip();
    let mut provenance = traj.provenance.clone();
    provenance.push(ProvenanceEntry::new(
        format!("{VIAUG_STAGE}:{}", cfg.mode),
        json!({ "config": cfg, "synthesizer": synth.name() }),
        Some(seed.clone()),
    ));
    let report = ViAugReport {
        trajectory: traj.id.clone(),
        mode: cfg.mode,
        perturbations,
        hole_fraction: holes.iter().map(HoleMap::fraction).collect(),
    };
    Ok((
        Trajectory {
            frames,
            provenance,
            ..traj.clone()
        },
        report,
    ))
}
