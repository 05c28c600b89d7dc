//! Stochastic sampling: gripper poses, hemisphere cameras, viewpoint
//! perturbations and brightness deltas.
//!
//! Every random draw comes from a stream derived from a [`SeedPath`]. The
//! derivation hashes the master seed together with the path, so a stream
//! depends only on *where* it is used, never on execution order or on how
//! many workers are running.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{look_at, Camera, CameraExtrinsics, CameraIntrinsics};
use crate::geometry::{Pose, RigidTransform, Rotation};

pub type Stream = ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedComponent {
    pub stage: String,
    pub trajectory: u64,
    pub frame: u64,
}

/// Address of a random stream: a master seed plus an ordered path of
/// `(stage, trajectory, frame)` components.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub master_seed: u64,
    #[serde(default)]
    pub path: Vec<SeedComponent>,
}

impl SeedPath {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            path: Vec::new(),
        }
    }

    pub fn child(&self, stage: &str, trajectory: u64, frame: u64) -> Self {
        let mut path = self.path.clone();
        path.push(SeedComponent {
            stage: stage.to_owned(),
            trajectory,
            frame,
        });
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    pub fn stream(&self) -> Stream {
        derive_stream(self)
    }
}

/// Stable 64-bit key for a string identifier (trajectory ids, chain names).
pub fn stable_key(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn derive_stream(seed_path: &SeedPath) -> Stream {
    let mut h = Sha256::new();
    h.update(b"xembody-seed-v1");
    h.update(seed_path.master_seed.to_le_bytes());
    for c in &seed_path.path {
        h.update((c.stage.len() as u32).to_le_bytes());
        h.update(c.stage.as_bytes());
        h.update(c.trajectory.to_le_bytes());
        h.update(c.frame.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn uniform(lo: f64, hi: f64, rng: &mut Stream) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn symmetric(range: f64, rng: &mut Stream) -> f64 {
    if range == 0.0 {
        0.0
    } else {
        rng.random_range(-range..=range)
    }
}

/// Draws from `N(mean, std)` until the value lands in `[lo, hi]`.
fn truncated_normal(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut Stream) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, std).expect("validated std");
    loop {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

fn check_gaussian(name: &str, g: &Gaussian, lo: f64, hi: f64) -> Result<(), SamplerError> {
    if !(g.std >= 0.0) || !g.mean.is_finite() {
        return Err(SamplerError::InvalidConfig(format!("{name}: bad gaussian {g:?}")));
    }
    if !(lo < hi) && g.std > 0.0 {
        return Err(SamplerError::InvalidConfig(format!("{name}: empty range [{lo}, {hi}]")));
    }
    if g.std == 0.0 && !(lo..=hi).contains(&g.mean) {
        return Err(SamplerError::InvalidConfig(format!(
            "{name}: fixed value {} outside [{lo}, {hi}]",
            g.mean
        )));
    }
    Ok(())
}

/// Gripper-pose sampling. Defaults follow the paired-data generator: a box
/// for the tool position, a zenith angle for the approach axis biased towards
/// straight down, and uniform azimuth and roll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotPoseSamplerConfig {
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    pub zenith: Gaussian,
    /// Zenith draws outside this interval are redrawn.
    pub zenith_range: [f64; 2],
    pub azimuth_range: [f64; 2],
    pub roll_range: [f64; 2],
}

impl Default for RobotPoseSamplerConfig {
    fn default() -> Self {
        Self {
            box_min: [-0.25, -0.25, 0.6],
            box_max: [0.25, 0.25, 1.3],
            zenith: Gaussian {
                mean: PI,
                std: PI / 3.5,
            },
            zenith_range: [0.0, PI],
            azimuth_range: [0.0, TAU],
            roll_range: [0.0, TAU],
        }
    }
}

impl RobotPoseSamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        for axis in 0..3 {
            if !(self.box_min[axis] <= self.box_max[axis]) {
                return Err(SamplerError::InvalidConfig(format!(
                    "box axis {axis}: {} > {}",
                    self.box_min[axis], self.box_max[axis]
                )));
            }
        }
        let [lo, hi] = self.zenith_range;
        check_gaussian("zenith", &self.zenith, lo, hi)
    }
}

/// Builds the gripper orientation whose third column (approach axis) is
/// `z_axis`, rotated by `roll` about it.
pub fn frame_from_approach(z_axis: &Vector3<f64>, roll: f64) -> Rotation {
    let z = z_axis.normalize();
    let reference = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x0 = (reference - z * reference.dot(&z)).normalize();
    let y0 = z.cross(&x0);
    let x = x0 * roll.cos() + y0 * roll.sin();
    let y = z.cross(&x);
    Rotation::from_matrix(&Matrix3::from_columns(&[x, y, z]))
}

/// One sampled gripper pose plus the raw spherical parameters it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPoseSample {
    pub pose: Pose,
    pub zenith: f64,
    pub azimuth: f64,
    pub roll: f64,
}

pub fn sample_robot_pose_detailed(cfg: &RobotPoseSamplerConfig, rng: &mut Stream) -> RobotPoseSample {
    let t = Vector3::from_fn(|i, _| uniform(cfg.box_min[i], cfg.box_max[i], rng));
    let [zlo, zhi] = cfg.zenith_range;
    let zenith = truncated_normal(cfg.zenith.mean, cfg.zenith.std, zlo, zhi, rng);
    let azimuth = uniform(cfg.azimuth_range[0], cfg.azimuth_range[1], rng);
    let roll = uniform(cfg.roll_range[0], cfg.roll_range[1], rng);
    let approach = Vector3::new(
        zenith.sin() * azimuth.cos(),
        zenith.sin() * azimuth.sin(),
        zenith.cos(),
    );
    RobotPoseSample {
        pose: Pose::new(frame_from_approach(&approach, roll), t),
        zenith,
        azimuth,
        roll,
    }
}

pub fn sample_robot_pose(cfg: &RobotPoseSamplerConfig, rng: &mut Stream) -> Pose {
    sample_robot_pose_detailed(cfg, rng).pose
}

/// Camera sampling on a hemisphere centered at the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSamplerConfig {
    pub radius: Gaussian,
    /// Radius draws at or below this are redrawn.
    pub radius_min: f64,
    pub zenith: Gaussian,
    pub zenith_range: [f64; 2],
    pub azimuth_range: [f64; 2],
    pub fov_range_deg: [f64; 2],
    /// Uniform per-axis translation noise (m) applied in the camera frame.
    pub translation_noise: f64,
    /// Uniform per-axis Euler noise (rad) applied in the camera frame.
    pub rotation_noise: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraSamplerConfig {
    fn default() -> Self {
        Self {
            radius: Gaussian {
                mean: 0.85,
                std: 0.2,
            },
            radius_min: 0.2,
            zenith: Gaussian {
                mean: PI / 4.0,
                std: PI / 2.2,
            },
            zenith_range: [0.0, PI / 2.0],
            azimuth_range: [-PI * 3.7 / 4.0, PI * 3.7 / 4.0],
            fov_range_deg: [40.0, 70.0],
            translation_noise: 0.02,
            rotation_noise: 0.02,
            width: 256,
            height: 256,
        }
    }
}

impl CameraSamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        check_gaussian("radius", &self.radius, self.radius_min, f64::INFINITY)?;
        if self.radius.std == 0.0 && self.radius.mean <= self.radius_min {
            return Err(SamplerError::InvalidConfig("fixed radius below radius_min".into()));
        }
        let [lo, hi] = self.zenith_range;
        check_gaussian("camera zenith", &self.zenith, lo, hi)?;
        let [flo, fhi] = self.fov_range_deg;
        if !(flo <= fhi && flo > 10.0 && fhi < 170.0) {
            return Err(SamplerError::InvalidConfig(format!("fov range [{flo}, {fhi}]")));
        }
        if self.translation_noise < 0.0 || self.rotation_noise < 0.0 {
            return Err(SamplerError::InvalidConfig("negative pose noise".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SamplerError::InvalidConfig("zero image size".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSample {
    pub camera: Camera,
    pub radius: f64,
    pub zenith: f64,
    pub azimuth: f64,
}

pub fn sample_camera_detailed(
    cfg: &CameraSamplerConfig,
    gripper_position: &Vector3<f64>,
    rng: &mut Stream,
) -> CameraSample {
    let radius = if cfg.radius.std == 0.0 {
        cfg.radius.mean
    } else {
        let normal = Normal::new(cfg.radius.mean, cfg.radius.std).expect("validated std");
        loop {
            let r = normal.sample(rng);
            if r > cfg.radius_min {
                break r;
            }
        }
    };
    let [zlo, zhi] = cfg.zenith_range;
    let zenith = truncated_normal(cfg.zenith.mean, cfg.zenith.std, zlo, zhi, rng);
    let azimuth = uniform(cfg.azimuth_range[0], cfg.azimuth_range[1], rng);
    let fov = uniform(cfg.fov_range_deg[0], cfg.fov_range_deg[1], rng);
    let noise_t = Vector3::from_fn(|_, _| symmetric(cfg.translation_noise, rng));
    let noise_e = [0; 3].map(|_| symmetric(cfg.rotation_noise, rng));

    let offset = Vector3::new(
        zenith.sin() * azimuth.cos(),
        zenith.sin() * azimuth.sin(),
        zenith.cos(),
    ) * radius;
    let eye = gripper_position + offset;
    // Straight overhead views have no usable world-up; fall back to +x.
    let base = look_at(&eye, gripper_position, &Vector3::z())
        .or_else(|_| look_at(&eye, gripper_position, &Vector3::x()))
        .expect("radius > 0 keeps eye away from target");
    let noise = Pose::new(Rotation::from_euler(noise_e[0], noise_e[1], noise_e[2]), noise_t);
    let extrinsics = CameraExtrinsics::new(base.pose.compose(&noise));
    let intrinsics = CameraIntrinsics::new(cfg.width, cfg.height, fov).expect("validated fov range");
    CameraSample {
        camera: Camera::new(intrinsics, extrinsics),
        radius,
        zenith,
        azimuth,
    }
}

pub fn sample_camera(cfg: &CameraSamplerConfig, gripper_position: &Vector3<f64>, rng: &mut Stream) -> Camera {
    sample_camera_detailed(cfg, gripper_position, rng).camera
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// One perturbation shared by every frame of a trajectory.
    Consistent,
    /// An independent perturbation per frame.
    #[default]
    Inconsistent,
}

impl std::str::FromStr for PerturbationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "consistent" => Ok(Self::Consistent),
            "inconsistent" => Ok(Self::Inconsistent),
            other => Err(format!("unknown perturbation mode '{other}'")),
        }
    }
}

impl std::fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Consistent => "consistent",
            Self::Inconsistent => "inconsistent",
        })
    }
}

/// Box ranges for camera-frame viewpoint perturbations. Each range `r`
/// means the component is drawn uniformly from `[-r, r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViAugConfig {
    pub tx_range: f64,
    pub ty_range: f64,
    pub tz_range: f64,
    pub euler_range: [f64; 3],
    pub mode: PerturbationMode,
}

impl Default for ViAugConfig {
    fn default() -> Self {
        Self {
            tx_range: 0.25,
            ty_range: 0.1,
            tz_range: 0.25,
            euler_range: [0.1; 3],
            mode: PerturbationMode::Inconsistent,
        }
    }
}

impl ViAugConfig {
    pub fn zero() -> Self {
        Self {
            tx_range: 0.0,
            ty_range: 0.0,
            tz_range: 0.0,
            euler_range: [0.0; 3],
            mode: PerturbationMode::Inconsistent,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let all = [self.tx_range, self.ty_range, self.tz_range]
            .into_iter()
            .chain(self.euler_range);
        for r in all {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(SamplerError::InvalidConfig(format!("perturbation range {r}")));
            }
        }
        Ok(())
    }

    pub fn translation_ranges(&self) -> [f64; 3] {
        [self.tx_range, self.ty_range, self.tz_range]
    }
}

/// A sampled camera perturbation, kept in its sampled parameterization so
/// bounds can be checked exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPerturbation {
    pub translation: [f64; 3],
    pub euler: [f64; 3],
}

impl ViewPerturbation {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            euler: [0.0; 3],
        }
    }

    pub fn transform(&self) -> RigidTransform {
        let [rx, ry, rz] = self.euler;
        Pose::new(Rotation::from_euler(rx, ry, rz), Vector3::from(self.translation))
    }

    pub fn within(&self, cfg: &ViAugConfig) -> bool {
        let t = cfg.translation_ranges();
        (0..3).all(|i| self.translation[i].abs() <= t[i] && self.euler[i].abs() <= cfg.euler_range[i])
    }
}

pub fn sample_view_perturbation(cfg: &ViAugConfig, rng: &mut Stream) -> ViewPerturbation {
    let t = cfg.translation_ranges();
    let translation = [0, 1, 2].map(|i| symmetric(t[i], rng));
    let euler = [0, 1, 2].map(|i| symmetric(cfg.euler_range[i], rng));
    ViewPerturbation { translation, euler }
}

/// Uniform integer in `[-range, range]`.
pub fn sample_brightness_delta(range: u32, rng: &mut Stream) -> i32 {
    if range == 0 {
        return 0;
    }
    let r = range as i32;
    rng.random_range(-r..=r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;

    fn draws(path: &SeedPath) -> Vec<u64> {
        let mut s = path.stream();
        (0..100).map(|_| s.random()).collect()
    }

    #[test]
    fn same_path_same_stream() {
        let p = SeedPath::new(7).child("vi-aug", 3, 4);
        assert_eq!(draws(&p), draws(&p.clone()));
    }

    #[test]
    fn frame_index_changes_stream() {
        let base = SeedPath::new(7);
        assert_ne!(draws(&base.child("vi-aug", 3, 4)), draws(&base.child("vi-aug", 3, 5)));
        assert_ne!(draws(&base.child("vi-aug", 3, 4)), draws(&base.child("ro-aug", 3, 4)));
        assert_ne!(draws(&SeedPath::new(8).child("vi-aug", 3, 4)), draws(&base.child("vi-aug", 3, 4)));
    }

    #[test]
    fn stage_encoding_is_unambiguous() {
        // Length prefixes keep ("ab", "c") apart from ("a", "bc").
        let a = SeedPath::new(1).child("ab", 0, 0).child("c", 0, 0);
        let b = SeedPath::new(1).child("a", 0, 0).child("bc", 0, 0);
        assert_ne!(draws(&a), draws(&b));
    }

    #[test]
    fn execution_order_does_not_matter() {
        let base = SeedPath::new(99);
        let forward: Vec<i32> = (0..1000)
            .map(|f| sample_brightness_delta(30, &mut base.child("b", 0, f).stream()))
            .collect();
        let mut order: Vec<u64> = (0..1000).collect();
        let mut shuffler = SeedPath::new(5).stream();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffler);
        let mut permuted = vec![0; 1000];
        for f in order {
            permuted[f as usize] = sample_brightness_delta(30, &mut base.child("b", 0, f).stream());
        }
        assert_eq!(forward, permuted);
    }

    #[test]
    fn zero_width_box_is_exact() {
        let cfg = RobotPoseSamplerConfig {
            box_min: [0.1, -0.2, 0.9],
            box_max: [0.1, -0.2, 0.9],
            ..Default::default()
        };
        let mut s = SeedPath::new(1).stream();
        for _ in 0..100 {
            assert_eq!(sample_robot_pose(&cfg, &mut s).translation, Vector3::new(0.1, -0.2, 0.9));
        }
    }

    #[test]
    fn approach_axis_matches_spherical_angles() {
        let mut s = SeedPath::new(2).stream();
        for _ in 0..1000 {
            let sample = sample_robot_pose_detailed(&RobotPoseSamplerConfig::default(), &mut s);
            let z = sample.pose.rotation.apply(&Vector3::z());
            assert!((z.z - sample.zenith.cos()).abs() < 1e-12);
            assert!((0.0..=PI).contains(&sample.zenith));
        }
    }

    #[test]
    fn zero_noise_camera_centers_gripper() {
        let cfg = CameraSamplerConfig {
            radius: Gaussian { mean: 0.9, std: 0.0 },
            translation_noise: 0.0,
            rotation_noise: 0.0,
            ..Default::default()
        };
        cfg.validate().unwrap();
        let g = Vector3::new(0.1, -0.05, 0.9);
        let mut s = SeedPath::new(3).stream();
        for _ in 0..500 {
            let sample = sample_camera_detailed(&cfg, &g, &mut s);
            assert_eq!(sample.radius, 0.9);
            let c = sample.camera;
            let (u, v, d) = project(&c.intrinsics, &c.extrinsics, &g).unwrap();
            assert!((u - 128.0).abs() < 1e-6 && (v - 128.0).abs() < 1e-6, "{u} {v}");
            assert!((d - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn camera_stays_on_upper_hemisphere() {
        let cfg = CameraSamplerConfig {
            translation_noise: 0.0,
            rotation_noise: 0.0,
            ..Default::default()
        };
        let g = Vector3::new(0.0, 0.0, 1.0);
        let mut s = SeedPath::new(4).stream();
        for _ in 0..2000 {
            let sample = sample_camera_detailed(&cfg, &g, &mut s);
            let eye = sample.camera.extrinsics.pose.translation;
            assert!(eye.z >= g.z - 1e-12);
            assert!(sample.radius > 0.2);
            assert!(sample.azimuth.abs() <= PI * 3.7 / 4.0);
        }
    }

    #[test]
    fn zero_ranges_give_identity() {
        let mut s = SeedPath::new(5).stream();
        let p = sample_view_perturbation(&ViAugConfig::zero(), &mut s);
        assert_eq!(p, ViewPerturbation::identity());
        assert_eq!(p.transform(), Pose::identity());
    }

    #[test]
    fn default_perturbations_respect_box() {
        let cfg = ViAugConfig::default();
        let mut s = SeedPath::new(6).stream();
        for _ in 0..10_000 {
            let p = sample_view_perturbation(&cfg, &mut s);
            assert!(p.translation[0].abs() <= 0.25 && p.translation[2].abs() <= 0.25);
            assert!(p.translation[1].abs() <= 0.1);
            assert!(p.euler.iter().all(|e| e.abs() <= 0.1));
        }
    }

    #[test]
    fn brightness_ranges() {
        let mut s = SeedPath::new(7).stream();
        assert_eq!(sample_brightness_delta(0, &mut s), 0);
        let d30: Vec<i32> = (0..10_000).map(|_| sample_brightness_delta(30, &mut s)).collect();
        assert!(d30.iter().all(|d| (-30..=30).contains(d)));
        let mean = d30.iter().map(|&d| d as f64).sum::<f64>() / d30.len() as f64;
        assert!(mean.abs() < 0.6, "{mean}");
        assert!(d30.contains(&30) && d30.contains(&-30));
        let d40: Vec<i32> = (0..10_000).map(|_| sample_brightness_delta(40, &mut s)).collect();
        assert!(d40.iter().all(|d| (-40..=40).contains(d)));
    }

    #[test]
    fn config_validation() {
        let mut c = RobotPoseSamplerConfig::default();
        c.box_min[2] = 2.0;
        assert!(c.validate().is_err());
        let mut c = CameraSamplerConfig::default();
        c.fov_range_deg = [80.0, 60.0];
        assert!(c.validate().is_err());
        let mut v = ViAugConfig::default();
        v.ty_range = -0.1;
        assert!(v.validate().is_err());
        assert!(ViAugConfig::default().validate().is_ok());
    }
}
