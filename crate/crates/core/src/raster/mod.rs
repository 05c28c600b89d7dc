//! Image layers, the capsule renderer, HSV compositing and background plates.

mod backdrop;
mod color;
mod corpus;
mod render;

use std::fmt;

use image::{GrayImage, RgbImage};
use thiserror::Error;

use crate::camera::Camera;
use crate::geometry::{Action, Pose};
use crate::kinematics::JointConfig;

pub use backdrop::Backdrop;
pub use color::{composite, hsv_to_rgb, rgb_to_hsv, shift_value, Hsv};
pub use corpus::{paste_on_background_corpus, BackgroundCorpus, PasteInfo};
pub use render::{render, render_capsules, render_over, Light, WorldCapsule};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame has no robot mask")]
    MissingMask,
    #[error("background corpus {0} has no decodable images")]
    EmptyCorpus(String),
    #[error("depth blob: {0}")]
    DepthFormat(String),
    #[error(transparent)]
    Kinematics(#[from] crate::kinematics::KinematicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-pixel booleans, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self, RasterError> {
        if data.len() != (width * height) as usize {
            return Err(RasterError::DimensionMismatch(format!(
                "{} mask values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// 8-bit image, 255 for set pixels.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| image::Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    /// Any nonzero pixel counts as set.
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().map(|p| p.0[0] != 0).collect(),
        }
    }
}

/// Camera-frame z depth in meters per pixel; 0 marks invalid pixels.
#[derive(Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl fmt::Debug for DepthMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let valid = self.data.iter().filter(|d| **d > 0.0).count();
        write!(f, "DepthMap({}x{}, {valid} valid)", self.width, self.height)
    }
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Result<Self, RasterError> {
        if data.len() != (width * height) as usize {
            return Err(RasterError::DimensionMismatch(format!(
                "{} depth values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    /// `"DPTH"`, u16 width, u16 height (little-endian), then f32 LE values
    /// row-major.
    pub fn encode(&self) -> Result<Vec<u8>, RasterError> {
        let (w, h) = (
            u16::try_from(self.width).map_err(|_| RasterError::DepthFormat("width exceeds u16".into()))?,
            u16::try_from(self.height).map_err(|_| RasterError::DepthFormat("height exceeds u16".into()))?,
        );
        let mut out = Vec::with_capacity(8 + 4 * self.data.len());
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(&h.to_le_bytes());
        for d in &self.data {
            out.extend_from_slice(&d.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < 8 || &bytes[..4] != DEPTH_MAGIC {
            return Err(RasterError::DepthFormat("missing DPTH header".into()));
        }
        let w = u16::from_le_bytes([bytes[4], bytes[5]]) as u32;
        let h = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
        let body = &bytes[8..];
        if body.len() != 4 * (w * h) as usize {
            return Err(RasterError::DepthFormat(format!(
                "{} payload bytes for {w}x{h}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { width: w, height: h, data })
    }
}

/// One timestep: observation layers plus the robot state that goes with it.
#[derive(Clone, PartialEq)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// Robot pixels, when known.
    pub mask: Option<Mask>,
    pub camera: Camera,
    pub gripper_pose: Pose,
    pub action: Option<Action>,
    /// Joint angles of the robot shown in the image, when recorded.
    pub joints: Option<JointConfig>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("size", &self.rgb.dimensions())
            .field("depth", &self.depth)
            .field("mask", &self.mask)
            .field("camera", &self.camera)
            .field("gripper_pose", &self.gripper_pose)
            .field("action", &self.action)
            .field("joints", &self.joints)
            .finish()
    }
}

impl Frame {
    pub fn dimensions(&self) -> (u32, u32) {
        self.rgb.dimensions()
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        let dims = self.rgb.dimensions();
        if self.depth.dimensions() != dims {
            return Err(RasterError::DimensionMismatch(format!(
                "rgb {dims:?} vs depth {:?}",
                self.depth.dimensions()
            )));
        }
        if let Some(m) = &self.mask {
            if m.dimensions() != dims {
                return Err(RasterError::DimensionMismatch(format!(
                    "rgb {dims:?} vs mask {:?}",
                    m.dimensions()
                )));
            }
        }
        let intr = &self.camera.intrinsics;
        if (intr.width(), intr.height()) != dims {
            return Err(RasterError::DimensionMismatch(format!(
                "rgb {dims:?} vs camera {}x{}",
                intr.width(),
                intr.height()
            )));
        }
        Ok(())
    }
}

/// A background image (and optionally its depth) that robot layers are
/// pasted onto.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundPlate {
    pub rgb: RgbImage,
    pub depth: Option<DepthMap>,
}

impl BackgroundPlate {
    pub fn new(rgb: RgbImage) -> Self {
        Self { rgb, depth: None }
    }

    pub fn solid(width: u32, height: u32, color: [u8; 3]) -> Self {
        Self::new(RgbImage::from_pixel(width, height, image::Rgb(color)))
    }

    /// The frame's pixels as a plate, depth included.
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            rgb: frame.rgb.clone(),
            depth: Some(frame.depth.clone()),
        }
    }
}

/// Peak signal-to-noise ratio (dB, peak 255) over the pixels where `mask`
/// is set, or all pixels. Infinite for identical images; `None` when the
/// sizes differ or no pixel is selected.
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: Option<&Mask>) -> Option<f64> {
    if a.dimensions() != b.dimensions() || mask.is_some_and(|m| m.dimensions() != a.dimensions()) {
        return None;
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, (pa, pb)) in a.pixels().zip(b.pixels()).enumerate() {
        if mask.is_some_and(|m| !m.as_slice()[i]) {
            continue;
        }
        for c in 0..3 {
            let d = f64::from(pa.0[c]) - f64::from(pb.0[c]);
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return None;
    }
    let mse = sum / n as f64;
    Some(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0 * 255.0 / mse).log10() })
}
