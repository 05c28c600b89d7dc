//! Per-pixel ray casting against capsules with a z-buffer.
//!
//! Every pixel shoots a ray through its center. The ray direction is scaled
//! to unit camera-frame z, so the ray parameter at a hit *is* the depth.

use image::{Rgb, RgbImage};
use nalgebra::Vector3;

use super::{BackgroundPlate, DepthMap, Frame, Mask, RasterError};
use crate::camera::{Camera, NEAR_PLANE};
use crate::kinematics::{JointConfig, KinematicChain};

/// Fixed directional light. `direction` points from the light into the scene
/// (world frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Light {
    pub direction: Vector3<f64>,
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for Light {
    fn default() -> Self {
        Self {
            direction: Vector3::new(0.3, -0.2, -1.0).normalize(),
            ambient: 0.35,
            diffuse: 0.65,
        }
    }
}

/// A capsule in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldCapsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
    pub color: [u8; 3],
}

struct CamCapsule {
    a: Vector3<f64>,
    b: Vector3<f64>,
    radius: f64,
    color: [u8; 3],
    /// Inclusive pixel bounds `(x0, x1, y0, y1)`.
    bounds: Option<(u32, u32, u32, u32)>,
}

/// Nearest positive hit of the ray `t·d` (origin at the camera) with a
/// sphere.
fn hit_sphere(d: &Vector3<f64>, c: &Vector3<f64>, r: f64) -> Option<f64> {
    let a = d.dot(d);
    let b = d.dot(c);
    let k = c.dot(c) - r * r;
    let h = b * b - a * k;
    if h < 0.0 {
        return None;
    }
    let t = (b - h.sqrt()) / a;
    (t > 0.0).then_some(t)
}

/// Nearest positive hit with the lateral surface of the finite cylinder.
fn hit_cylinder(d: &Vector3<f64>, pa: &Vector3<f64>, pb: &Vector3<f64>, r: f64) -> Option<(f64, f64)> {
    let ba = pb - pa;
    let oa = -pa;
    let baba = ba.dot(&ba);
    if baba == 0.0 {
        return None;
    }
    let bard = ba.dot(d);
    let baoa = ba.dot(&oa);
    let rdoa = d.dot(&oa);
    let oaoa = oa.dot(&oa);
    let dd = d.dot(d);
    let a = baba * dd - bard * bard;
    if a <= 1e-12 * baba * dd {
        return None;
    }
    let b = baba * rdoa - baoa * bard;
    let c = baba * oaoa - baoa * baoa - r * r * baba;
    let h = b * b - a * c;
    if h < 0.0 {
        return None;
    }
    let t = (-b - h.sqrt()) / a;
    let y = baoa + t * bard;
    (t > 0.0 && y > 0.0 && y < baba).then_some((t, y / baba))
}

/// Entry point of the ray into the capsule and the outward surface normal.
fn hit_capsule(d: &Vector3<f64>, cap: &CamCapsule) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut take = |t: f64, center: Vector3<f64>| {
        if best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, (d * t - center) / cap.radius));
        }
    };
    if let Some((t, s)) = hit_cylinder(d, &cap.a, &cap.b, cap.radius) {
        take(t, cap.a + (cap.b - cap.a) * s);
    }
    if let Some(t) = hit_sphere(d, &cap.a, cap.radius) {
        take(t, cap.a);
    }
    if let Some(t) = hit_sphere(d, &cap.b, cap.radius) {
        take(t, cap.b);
    }
    best
}

fn pixel_bounds(cap: &CamCapsule, camera: &Camera) -> Option<(u32, u32, u32, u32)> {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width(), intr.height());
    let lo = cap.a.inf(&cap.b).add_scalar(-cap.radius);
    let hi = cap.a.sup(&cap.b).add_scalar(cap.radius);
    if hi.z <= NEAR_PLANE {
        return None;
    }
    if lo.z <= NEAR_PLANE {
        return Some((0, w - 1, 0, h - 1));
    }
    // x/z over the bounding box is extremal at its corners.
    let ratios = |lo_v: f64, hi_v: f64| {
        let r = [lo_v / lo.z, lo_v / hi.z, hi_v / lo.z, hi_v / hi.z];
        (
            r.iter().cloned().fold(f64::INFINITY, f64::min),
            r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (xr0, xr1) = ratios(lo.x, hi.x);
    let (yr0, yr1) = ratios(lo.y, hi.y);
    let u0 = (intr.fx() * xr0 + intr.cx()).floor() - 1.0;
    let u1 = (intr.fx() * xr1 + intr.cx()).ceil() + 1.0;
    let v0 = (intr.fy() * yr0 + intr.cy()).floor() - 1.0;
    let v1 = (intr.fy() * yr1 + intr.cy()).ceil() + 1.0;
    if u1 < 0.0 || v1 < 0.0 || u0 >= w as f64 || v0 >= h as f64 {
        return None;
    }
    let clamp = |v: f64, max: u32| v.clamp(0.0, max as f64) as u32;
    Some((clamp(u0, w - 1), clamp(u1, w - 1), clamp(v0, h - 1), clamp(v1, h - 1)))
}

/// Robot-only render: depth/normal/color per pixel, before compositing.
struct Raster {
    depth: Vec<f64>,
    normal: Vec<Vector3<f64>>,
    color: Vec<[u8; 3]>,
}

fn rasterize(capsules: &[WorldCapsule], camera: &Camera) -> Raster {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width(), intr.height());
    let to_cam = camera.extrinsics.pose.inverse();
    let cams: Vec<CamCapsule> = capsules
        .iter()
        .map(|c| {
            let mut cap = CamCapsule {
                a: to_cam.transform_point(&c.a),
                b: to_cam.transform_point(&c.b),
                radius: c.radius,
                color: c.color,
                bounds: None,
            };
            cap.bounds = pixel_bounds(&cap, camera);
            cap
        })
        .collect();

    let n = (w * h) as usize;
    let mut out = Raster {
        depth: vec![f64::INFINITY; n],
        normal: vec![Vector3::zeros(); n],
        color: vec![[0; 3]; n],
    };
    for cap in &cams {
        let Some((x0, x1, y0, y1)) = cap.bounds else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = intr.ray(x as f64 + 0.5, y as f64 + 0.5);
                if let Some((t, normal)) = hit_capsule(&d, cap) {
                    let i = (y * w + x) as usize;
                    if t < out.depth[i] {
                        out.depth[i] = t;
                        out.normal[i] = normal;
                        out.color[i] = cap.color;
                    }
                }
            }
        }
    }
    out
}

fn shade(color: [u8; 3], normal: &Vector3<f64>, light_cam: &Vector3<f64>, light: &Light) -> [u8; 3] {
    let lambert = (-normal.dot(light_cam)).max(0.0);
    let intensity = (light.ambient + light.diffuse * lambert).min(1.0);
    color.map(|c| (c as f64 * intensity + 0.5).floor().min(255.0) as u8)
}

/// Renders raw capsules into `(rgb, depth, mask)` over a background plate.
/// Robot pixels win where they are closer than the plate's depth; plate
/// pixels with depth 0 (or no plate depth at all) count as infinitely far.
pub fn render_capsules(
    capsules: &[WorldCapsule],
    camera: &Camera,
    plate: Option<&BackgroundPlate>,
    light: &Light,
) -> (RgbImage, DepthMap, Mask) {
    let intr = &camera.intrinsics;
    let (w, h) = (intr.width(), intr.height());
    let raster = rasterize(capsules, camera);
    let light_cam = camera.extrinsics.pose.rotation.inverse().apply(&light.direction);

    let mut rgb = match plate {
        Some(p) => p.rgb.clone(),
        None => RgbImage::new(w, h),
    };
    let mut depth = match plate.and_then(|p| p.depth.clone()) {
        Some(d) => d,
        None => DepthMap::new(w, h),
    };
    let mut mask = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let t = raster.depth[i];
            if !t.is_finite() {
                continue;
            }
            let behind = depth.get(x, y);
            if behind > 0.0 && (behind as f64) <= t {
                continue;
            }
            rgb.put_pixel(x, y, Rgb(shade(raster.color[i], &raster.normal[i], &light_cam, light)));
            depth.set(x, y, t as f32);
            mask.set(x, y, true);
        }
    }
    (rgb, depth, mask)
}

fn chain_capsules(chain: &KinematicChain, q: &JointConfig) -> Result<(Vec<WorldCapsule>, crate::geometry::Pose), RasterError> {
    let fk = chain.forward_kinematics(q)?;
    let capsules = chain
        .links()
        .iter()
        .zip(&fk.links)
        .flat_map(|(link, pose)| {
            link.capsules.iter().map(move |c| WorldCapsule {
                a: pose.transform_point(&c.a),
                b: pose.transform_point(&c.b),
                radius: c.radius,
                color: c.color,
            })
        })
        .collect();
    Ok((capsules, fk.tip))
}

/// Renders `chain` at `q` on a black, depthless background.
pub fn render(chain: &KinematicChain, q: &JointConfig, camera: &Camera) -> Result<Frame, RasterError> {
    render_with(chain, q, camera, None)
}

/// Renders `chain` at `q` over `plate`, occluded by the plate's depth.
pub fn render_over(
    chain: &KinematicChain,
    q: &JointConfig,
    camera: &Camera,
    plate: &BackgroundPlate,
) -> Result<Frame, RasterError> {
    let (w, h) = (camera.intrinsics.width(), camera.intrinsics.height());
    if plate.rgb.dimensions() != (w, h) {
        return Err(RasterError::DimensionMismatch(format!(
            "plate {:?} vs camera {w}x{h}",
            plate.rgb.dimensions()
        )));
    }
    render_with(chain, q, camera, Some(plate))
}

fn render_with(
    chain: &KinematicChain,
    q: &JointConfig,
    camera: &Camera,
    plate: Option<&BackgroundPlate>,
) -> Result<Frame, RasterError> {
    let (capsules, tip) = chain_capsules(chain, q)?;
    let (rgb, depth, mask) = render_capsules(&capsules, camera, plate, &Light::default());
    Ok(Frame {
        rgb,
        depth,
        mask: Some(mask),
        camera: *camera,
        gripper_pose: tip,
        action: None,
        joints: Some(q.clone()),
    })
}
