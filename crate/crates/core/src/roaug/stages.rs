//! Stage interfaces and their geometric default implementations.

use std::collections::VecDeque;

use image::{Rgb, RgbImage, RgbaImage};
use rayon::prelude::*;
use thiserror::Error;

use crate::kinematics::{inverse_kinematics_with, IkConfig, JointConfig, KinematicChain, KinematicsError};
use crate::raster::{render, DepthMap, Frame, Mask, RasterError};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{0}")]
    Invalid(String),
    #[error("plugin: {0}")]
    Plugin(String),
}

/// Robot pixels of a frame.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn segment(&self, frame: &Frame, robot: &KinematicChain) -> Result<Mask, StageError>;
}

/// A robot-only layer for the target robot at the frame's gripper pose.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotLayer {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub mask: Mask,
    /// Target joint angles, when the translator knows them.
    pub joints: Option<JointConfig>,
    pub position_error: f64,
    pub rotation_error: f64,
}

impl RobotLayer {
    /// The layer with the mask as alpha.
    pub fn to_rgba(&self) -> RgbaImage {
        RgbaImage::from_fn(self.rgb.width(), self.rgb.height(), |x, y| {
            let [r, g, b] = self.rgb.get_pixel(x, y).0;
            image::Rgba([r, g, b, if self.mask.get(x, y) { 255 } else { 0 }])
        })
    }
}

pub trait RobotTranslator: Send + Sync {
    fn name(&self) -> &str;
    /// `previous` is the target joint solution of the preceding frame in the
    /// same trajectory, if it succeeded.
    fn translate(
        &self,
        frame: &Frame,
        source: &KinematicChain,
        target: &KinematicChain,
        previous: Option<&JointConfig>,
    ) -> Result<RobotLayer, StageError>;
}

/// Fills hole pixels across a whole trajectory. Pixels outside the holes
/// must come back unchanged.
pub trait Inpainter: Send + Sync {
    fn name(&self) -> &str;
    fn inpaint(&self, frames: &[Frame], holes: &[Mask]) -> Result<Vec<Frame>, StageError>;
}

/// Uses the renderer's mask when the frame has one. Otherwise marks pixels
/// whose color is a shaded version of one of the robot's palette colors:
/// `c ≈ s·p` for some `s` in `[0.3, 1.05]`, within 6 levels per channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSegmenter;

impl OracleSegmenter {
    fn palette_match(c: [u8; 3], palette: &[[u8; 3]]) -> bool {
        let c = c.map(f64::from);
        palette.iter().any(|p| {
            let p = p.map(f64::from);
            let pp: f64 = p.iter().map(|v| v * v).sum();
            if pp == 0.0 {
                return c.iter().all(|v| *v <= 6.0);
            }
            let s = c.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() / pp;
            (0.3..=1.05).contains(&s) && c.iter().zip(&p).all(|(a, b)| (a - s * b).abs() <= 6.0)
        })
    }
}

impl Segmenter for OracleSegmenter {
    fn name(&self) -> &str {
        "oracle"
    }

    fn segment(&self, frame: &Frame, robot: &KinematicChain) -> Result<Mask, StageError> {
        if let Some(m) = &frame.mask {
            return Ok(m.clone());
        }
        let palette = robot.palette();
        let (w, h) = frame.dimensions();
        let data = frame
            .rgb
            .pixels()
            .map(|p| Self::palette_match(p.0, &palette))
            .collect();
        Ok(Mask::from_vec(w, h, data)?)
    }
}

/// Solves IK for the target robot at the frame's gripper pose and renders
/// it with the frame's camera.
///
/// IK seed: the frame's recorded joints when source and target are the same
/// robot (an exact fixed point), else the previous frame's solution, else
/// the target's home configuration.
#[derive(Debug, Clone, Default)]
pub struct GeometricTranslator {
    pub ik: IkConfig,
}

impl RobotTranslator for GeometricTranslator {
    fn name(&self) -> &str {
        "geometric"
    }

    fn translate(
        &self,
        frame: &Frame,
        source: &KinematicChain,
        target: &KinematicChain,
        previous: Option<&JointConfig>,
    ) -> Result<RobotLayer, StageError> {
        let recorded = frame
            .joints
            .as_ref()
            .filter(|q| source.name() == target.name() && target.check(q).is_ok());
        let seed = recorded.or(previous).unwrap_or(target.home());
        let sol = inverse_kinematics_with(target, &frame.gripper_pose, seed, &self.ik)?;
        let rendered = render(target, &sol.joints, &frame.camera)?;
        Ok(RobotLayer {
            rgb: rendered.rgb,
            depth: rendered.depth,
            mask: rendered.mask.expect("render always produces a mask"),
            joints: Some(sol.joints),
            position_error: sol.position_error,
            rotation_error: sol.rotation_error,
        })
    }
}

/// Temporal-median background fill; see [`plate_inpaint`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PlateInpainter;

impl Inpainter for PlateInpainter {
    fn name(&self) -> &str {
        "plate-median"
    }

    fn inpaint(&self, frames: &[Frame], holes: &[Mask]) -> Result<Vec<Frame>, StageError> {
        plate_inpaint(frames, holes)
    }
}

fn lower_median<T: Copy>(values: &mut [T], cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> T {
    values.sort_unstable_by(cmp);
    values[(values.len() - 1) / 2]
}

/// Fills every hole pixel with the per-channel (lower) median of that pixel
/// over the frames where it is not a hole. Pixels that are holes in every
/// frame take the value of the nearest pixel that has a median (4-connected
/// breadth-first order). Depth is filled the same way.
pub fn plate_inpaint(frames: &[Frame], holes: &[Mask]) -> Result<Vec<Frame>, StageError> {
    let Some(first) = frames.first() else {
        return Err(StageError::Invalid("inpainting needs at least one frame".into()));
    };
    if holes.len() != frames.len() {
        return Err(StageError::Invalid(format!("{} masks for {} frames", holes.len(), frames.len())));
    }
    let (w, h) = first.dimensions();
    for (f, m) in frames.iter().zip(holes) {
        if f.dimensions() != (w, h) || m.dimensions() != (w, h) {
            return Err(StageError::Invalid("frame or mask size differs within trajectory".into()));
        }
    }
    if holes.iter().all(Mask::is_empty) {
        return Ok(frames.to_vec());
    }

    let n = (w * h) as usize;
    let mut fill: Vec<Option<([u8; 3], f32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let visible: Vec<usize> = (0..frames.len()).filter(|&k| !holes[k].as_slice()[i]).collect();
            if visible.is_empty() {
                return None;
            }
            let (x, y) = (i as u32 % w, i as u32 / w);
            let mut buf: Vec<u8> = Vec::with_capacity(visible.len());
            let mut rgb = [0u8; 3];
            for (c, out) in rgb.iter_mut().enumerate() {
                buf.clear();
                buf.extend(visible.iter().map(|&k| frames[k].rgb.get_pixel(x, y).0[c]));
                *out = lower_median(&mut buf, Ord::cmp);
            }
            let mut depths: Vec<f32> = visible.iter().map(|&k| frames[k].depth.get(x, y)).collect();
            Some((rgb, lower_median(&mut depths, f32::total_cmp)))
        })
        .collect();

    let mut queue: VecDeque<usize> = (0..n).filter(|&i| fill[i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i as u32 % w, i as u32 / w);
        let value = fill[i];
        let neighbors = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w as usize),
            (y + 1 < h).then(|| i + w as usize),
        ];
        for j in neighbors.into_iter().flatten() {
            if fill[j].is_none() {
                fill[j] = value;
                queue.push_back(j);
            }
        }
    }

    Ok(frames
        .par_iter()
        .zip(holes)
        .map(|(f, m)| {
            let mut out = f.clone();
            for (i, &hole) in m.as_slice().iter().enumerate() {
                if let (true, Some((rgb, d))) = (hole, fill[i]) {
                    let (x, y) = (i as u32 % w, i as u32 / w);
                    out.rgb.put_pixel(x, y, Rgb(rgb));
                    out.depth.set(x, y, d);
                }
            }
            out
        })
        .collect())
}
