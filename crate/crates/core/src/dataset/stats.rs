use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dataset;

pub const BRIGHTNESS_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub robot: String,
    pub task: String,
    pub trajectories: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub trajectories: usize,
    pub frames: usize,
    /// One entry per (robot, task), sorted.
    pub cells: Vec<CellStats>,
    /// `[min, max]` of gripper positions per axis; absent for an empty
    /// dataset.
    pub gripper_bbox: Option<[[f64; 3]; 2]>,
    /// Population standard deviation of camera positions per axis.
    pub camera_translation_std: [f64; 3],
    /// Frames binned by mean HSV value (max channel), 16 bins over 0..256.
    pub brightness_histogram: [u64; BRIGHTNESS_BINS],
}

pub fn stats(ds: &Dataset) -> DatasetStats {
    let mut cells: BTreeMap<(&str, &str), (usize, usize)> = BTreeMap::new();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    // Welford running mean and sum of squared deviations.
    let mut mean = [0.0; 3];
    let mut m2 = [0.0; 3];
    let mut histogram = [0u64; BRIGHTNESS_BINS];
    let mut frames = 0usize;

    for t in &ds.trajectories {
        let cell = cells.entry((&t.robot, &t.task)).or_default();
        cell.0 += 1;
        cell.1 += t.frames.len();
        for f in &t.frames {
            frames += 1;
            let n = frames as f64;
            let g = f.gripper_pose.translation;
            let c = f.camera.extrinsics.pose.translation;
            for i in 0..3 {
                lo[i] = lo[i].min(g[i]);
                hi[i] = hi[i].max(g[i]);
                let d = c[i] - mean[i];
                mean[i] += d / n;
                m2[i] += d * (c[i] - mean[i]);
            }
            let pixels = f.rgb.pixels().len().max(1) as f64;
            let mean_v = f.rgb.pixels().map(|p| *p.0.iter().max().unwrap() as f64).sum::<f64>() / pixels;
            let bin = ((mean_v / 256.0 * BRIGHTNESS_BINS as f64) as usize).min(BRIGHTNESS_BINS - 1);
            histogram[bin] += 1;
        }
    }

    let camera_translation_std = if frames == 0 {
        [0.0; 3]
    } else {
        m2.map(|v| (v / frames as f64).sqrt())
    };
    DatasetStats {
        name: ds.name.clone(),
        trajectories: ds.trajectories.len(),
        frames,
        cells: cells
            .into_iter()
            .map(|((robot, task), (trajectories, frames))| CellStats {
                robot: robot.to_owned(),
                task: task.to_owned(),
                trajectories,
                frames,
            })
            .collect(),
        gripper_bbox: (frames > 0).then_some([lo, hi]),
        camera_translation_std,
        brightness_histogram: histogram,
    }
}
