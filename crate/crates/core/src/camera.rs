//! Pinhole camera: intrinsics from a vertical field of view, extrinsic pose,
//! projection and unprojection.
//!
//! Conventions: camera +z looks into the scene, +x is image right, +y is image
//! down. The image origin is the top-left corner and pixel `(i, j)` has its
//! center at `(i + 0.5, j + 0.5)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rotation};

/// Points closer than this (camera-frame z) are treated as behind the camera.
pub const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("eye, target and up do not define a camera frame")]
    DegenerateFrame,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Square-pixel pinhole intrinsics. `fov_deg` is the vertical field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    width: u32,
    height: u32,
    fov_deg: f64,
    focal: f64,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRepr {
    width: u32,
    height: u32,
    fov_deg: f64,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = CameraError;
    fn try_from(r: IntrinsicsRepr) -> Result<Self, CameraError> {
        CameraIntrinsics::new(r.width, r.height, r.fov_deg)
    }
}

impl From<CameraIntrinsics> for IntrinsicsRepr {
    fn from(c: CameraIntrinsics) -> Self {
        Self {
            width: c.width,
            height: c.height,
            fov_deg: c.fov_deg,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, fov_deg: f64) -> Result<Self, CameraError> {
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidIntrinsics(format!(
                "image size {width}x{height}"
            )));
        }
        if !(fov_deg > 10.0 && fov_deg < 170.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "field of view {fov_deg} deg outside (10, 170)"
            )));
        }
        let focal = 0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan();
        Ok(Self {
            width,
            height,
            fov_deg,
            focal,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn fov_deg(&self) -> f64 {
        self.fov_deg
    }

    pub fn fx(&self) -> f64 {
        self.focal
    }

    pub fn fy(&self) -> f64 {
        self.focal
    }

    pub fn cx(&self) -> f64 {
        0.5 * self.width as f64
    }

    pub fn cy(&self) -> f64 {
        0.5 * self.height as f64
    }

    /// Projects a camera-frame point to `(u, v)`.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Result<(f64, f64), CameraError> {
        if p.z <= NEAR_PLANE {
            return Err(CameraError::BehindCamera { z: p.z });
        }
        Ok((
            self.fx() * p.x / p.z + self.cx(),
            self.fy() * p.y / p.z + self.cy(),
        ))
    }

    /// Camera-frame point at pixel coordinates `(u, v)` and z-depth `depth`.
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>, CameraError> {
        if !(depth > 0.0) {
            return Err(CameraError::NonPositiveDepth(depth));
        }
        Ok(Vector3::new(
            (u - self.cx()) * depth / self.fx(),
            (v - self.cy()) * depth / self.fy(),
            depth,
        ))
    }

    /// Direction through pixel `(u, v)` scaled so that its z component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx()) / self.fx(), (v - self.cy()) / self.fy(), 1.0)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Camera pose in the world frame (camera-to-world).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct CameraExtrinsics {
    pub pose: Pose,
}

impl CameraExtrinsics {
    pub fn new(pose: Pose) -> Self {
        Self { pose }
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse().transform_point(p)
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.transform_point(p)
    }

    /// The camera moved by `perturbation` expressed in its own frame.
    pub fn perturbed(&self, perturbation: &Pose) -> Self {
        Self::new(self.pose.compose(perturbation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, extrinsics: CameraExtrinsics) -> Self {
        Self {
            intrinsics,
            extrinsics,
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64, f64), CameraError> {
        project(&self.intrinsics, &self.extrinsics, p)
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>, CameraError> {
        unproject(&self.intrinsics, &self.extrinsics, u, v, depth)
    }
}

/// World point to `(u, v, depth)`, depth being the camera-frame z.
pub fn project(
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    point_world: &Vector3<f64>,
) -> Result<(f64, f64, f64), CameraError> {
    let p = extr.world_to_camera(point_world);
    let (u, v) = intr.project_camera(&p)?;
    Ok((u, v, p.z))
}

pub fn unproject(
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Vector3<f64>, CameraError> {
    Ok(extr.camera_to_world(&intr.unproject_camera(u, v, depth)?))
}

/// Camera at `eye` whose +z axis points at `target`. `up` is a world-space
/// hint for image-up, so camera +y ends up opposite to it.
pub fn look_at(
    eye: &Vector3<f64>,
    target: &Vector3<f64>,
    up: &Vector3<f64>,
) -> Result<CameraExtrinsics, CameraError> {
    let forward = target - eye;
    if forward.norm() <= 1e-6 {
        return Err(CameraError::DegenerateFrame);
    }
    let z = forward.normalize();
    let x = z.cross(up);
    if x.norm() <= 1e-9 * up.norm().max(1.0) {
        return Err(CameraError::DegenerateFrame);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
    Ok(CameraExtrinsics::new(Pose::new(Rotation::from_matrix(&m), *eye)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(256, 256, 60.0).unwrap()
    }

    #[test]
    fn axis_point_projects_to_principal_point() {
        let (u, v, d) = project(&intr(), &CameraExtrinsics::default(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((u, v, d), (128.0, 128.0, 1.0));
    }

    #[test]
    fn closed_form_vertical_offset() {
        let c = intr();
        let fy = 128.0 / 30f64.to_radians().tan();
        assert_relative_eq!(c.fy(), fy, epsilon = 1e-12);
        let (_, v, _) = project(&c, &CameraExtrinsics::default(), &Vector3::new(0.0, 0.1, 1.0)).unwrap();
        assert_relative_eq!(v, 128.0 + fy * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_and_bad_depth() {
        let e = CameraExtrinsics::default();
        assert!(matches!(
            project(&intr(), &e, &Vector3::new(0.0, 0.0, -1.0)),
            Err(CameraError::BehindCamera { .. })
        ));
        assert!(matches!(unproject(&intr(), &e, 1.0, 1.0, 0.0), Err(CameraError::NonPositiveDepth(_))));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(256, 256, 10.0).is_err());
        assert!(CameraIntrinsics::new(256, 256, 170.0).is_err());
        assert!(CameraIntrinsics::new(0, 256, 60.0).is_err());
        let c = CameraIntrinsics::new(320, 240, 45.0).unwrap();
        assert_eq!((c.cx(), c.cy()), (160.0, 120.0));
    }

    #[test]
    fn look_at_canonical_frame() {
        let e = look_at(&Vector3::new(0.0, 0.0, -1.0), &Vector3::zeros(), &Vector3::new(0.0, -1.0, 0.0)).unwrap();
        assert!(e.pose.rotation.angle() < 1e-12);
        assert_eq!(e.pose.translation, Vector3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn look_at_from_positive_x() {
        let e = look_at(&Vector3::new(2.0, 0.0, 0.0), &Vector3::zeros(), &Vector3::z()).unwrap();
        let z_axis = e.pose.rotation.apply(&Vector3::z());
        assert_relative_eq!(z_axis, Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn look_at_degenerate() {
        let eye = Vector3::new(0.0, 0.0, 1.0);
        assert_eq!(look_at(&eye, &eye, &Vector3::z()), Err(CameraError::DegenerateFrame));
        assert_eq!(look_at(&eye, &Vector3::zeros(), &Vector3::z()), Err(CameraError::DegenerateFrame));
    }

    #[test]
    fn fov_rescales_offsets() {
        let p = Vector3::new(0.05, -0.03, 1.2);
        let e = CameraExtrinsics::default();
        let a = CameraIntrinsics::new(256, 256, 40.0).unwrap();
        let b = CameraIntrinsics::new(256, 256, 70.0).unwrap();
        let (ua, _, _) = project(&a, &e, &p).unwrap();
        let (ub, _, _) = project(&b, &e, &p).unwrap();
        let ratio = (ua - 128.0) / (ub - 128.0);
        let expected = 35f64.to_radians().tan() / 20f64.to_radians().tan();
        assert_relative_eq!(ratio, expected, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn look_at_centers_target(
            eye in prop::array::uniform3(-3.0f64..3.0),
            target in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let (eye, target) = (Vector3::from(eye), Vector3::from(target));
            prop_assume!((eye - target).norm() > 0.1);
            prop_assume!((eye - target).normalize().cross(&Vector3::z()).norm() > 1e-3);
            let e = look_at(&eye, &target, &Vector3::z()).unwrap();
            let (u, v, _) = project(&intr(), &e, &target).unwrap();
            prop_assert!((u - 128.0).abs() < 1e-6 && (v - 128.0).abs() < 1e-6);
        }

        #[test]
        fn project_unproject_round_trip(
            u in 0.0f64..256.0, v in 0.0f64..256.0, d in 0.05f64..20.0,
            t in prop::array::uniform3(-1.0f64..1.0), e in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let extr = CameraExtrinsics::new(Pose::new(Rotation::from_euler(e[0], e[1], e[2]), Vector3::from(t)));
            let p = unproject(&intr(), &extr, u, v, d).unwrap();
            let (u2, v2, d2) = project(&intr(), &extr, &p).unwrap();
            prop_assert!((u - u2).abs() < 1e-6 && (v - v2).abs() < 1e-6 && (d - d2).abs() < 1e-6);
        }
    }
}
