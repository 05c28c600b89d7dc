//! A procedural floor-and-wall scene that yields plates with real depth.

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{BackgroundPlate, DepthMap};
use crate::camera::Camera;

/// Checkered floor at `z = floor_z` and a plain wall at `x = wall_x`
/// (facing +x). Pixels that hit neither get `sky` and depth 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backdrop {
    pub floor_z: f64,
    pub wall_x: f64,
    pub tile: f64,
    pub floor_colors: [[u8; 3]; 2],
    pub wall_color: [u8; 3],
    pub sky: [u8; 3],
}

impl Default for Backdrop {
    fn default() -> Self {
        Self {
            floor_z: 0.0,
            wall_x: -1.5,
            tile: 0.25,
            floor_colors: [[150, 120, 90], [120, 95, 70]],
            wall_color: [170, 180, 160],
            sky: [60, 70, 80],
        }
    }
}

impl Backdrop {
    pub fn render(&self, camera: &Camera) -> BackgroundPlate {
        let intr = &camera.intrinsics;
        let (w, h) = (intr.width(), intr.height());
        let pose = &camera.extrinsics.pose;
        let eye = pose.translation;
        let mut rgb = RgbImage::new(w, h);
        let mut depth = DepthMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                // t along a ray with unit camera z is the z-depth.
                let d = pose.rotation.apply(&intr.ray(x as f64 + 0.5, y as f64 + 0.5));
                let floor = plane_hit(eye.z, d.z, self.floor_z);
                let wall = plane_hit(eye.x, d.x, self.wall_x);
                let (t, color) = match (floor, wall) {
                    (Some(tf), Some(tw)) if tw < tf => (tw, self.wall_shade(&(eye + d * tw))),
                    (Some(tf), _) => (tf, self.floor_shade(&(eye + d * tf))),
                    (None, Some(tw)) => (tw, self.wall_shade(&(eye + d * tw))),
                    (None, None) => {
                        rgb.put_pixel(x, y, Rgb(self.sky));
                        continue;
                    }
                };
                rgb.put_pixel(x, y, Rgb(color));
                depth.set(x, y, t as f32);
            }
        }
        BackgroundPlate {
            rgb,
            depth: Some(depth),
        }
    }

    fn floor_shade(&self, p: &Vector3<f64>) -> [u8; 3] {
        let i = (p.x / self.tile).floor() as i64 + (p.y / self.tile).floor() as i64;
        self.floor_colors[i.rem_euclid(2) as usize]
    }

    fn wall_shade(&self, p: &Vector3<f64>) -> [u8; 3] {
        // Faint horizontal banding so the wall is not a flat field.
        let band = ((p.z * 8.0).sin() * 6.0).round() as i32;
        self.wall_color.map(|c| (c as i32 + band).clamp(0, 255) as u8)
    }
}

fn plane_hit(origin: f64, dir: f64, plane: f64) -> Option<f64> {
    if dir.abs() < 1e-12 {
        return None;
    }
    let t = (plane - origin) / dir;
    (t > 0.0).then_some(t)
}
