use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use xembody::dataset::{read_dataset, Trajectory};
use xembody::raster::Frame;

use crate::PreviewArgs;

const GAP: u32 = 2;
const TINT: [u8; 3] = [255, 0, 160];

/// Indices of `n` frames evenly spaced over `len`, first and last included.
fn pick(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    if n == 1 {
        return vec![0];
    }
    (0..n).map(|k| k * (len - 1) / (n - 1)).collect()
}

fn tile(frame: &Frame, masks: bool) -> RgbImage {
    let mut img = frame.rgb.clone();
    if let (true, Some(mask)) = (masks, &frame.mask) {
        for (p, &m) in img.pixels_mut().zip(mask.as_slice()) {
            if m {
                for c in 0..3 {
                    p.0[c] = ((u16::from(p.0[c]) + u16::from(TINT[c])) / 2) as u8;
                }
            }
        }
    }
    img
}

/// Frames laid out row-major on a gray sheet. Frames of one trajectory
/// share their size.
pub fn montage(traj: &Trajectory, max_frames: usize, columns: u32, masks: bool) -> RgbImage {
    let picked = pick(traj.frames.len(), max_frames);
    let Some(first) = traj.frames.first() else {
        return RgbImage::new(1, 1);
    };
    let (w, h) = first.dimensions();
    let cols = columns.min(picked.len() as u32).max(1);
    let rows = (picked.len() as u32).div_ceil(cols);
    let mut sheet = RgbImage::from_pixel(cols * (w + GAP) + GAP, rows * (h + GAP) + GAP, Rgb([64, 64, 64]));
    for (k, &i) in picked.iter().enumerate() {
        let (c, r) = (k as u32 % cols, k as u32 / cols);
        image::imageops::replace(
            &mut sheet,
            &tile(&traj.frames[i], masks),
            i64::from(GAP + c * (w + GAP)),
            i64::from(GAP + r * (h + GAP)),
        );
    }
    sheet
}

pub fn preview(args: PreviewArgs) -> Result<()> {
    let ds = read_dataset(&args.input).with_context(|| format!("reading dataset {}", args.input.display()))?;
    let traj = ds.trajectory(&args.trajectory)?;
    let sheet = montage(traj, args.max_frames as usize, args.columns, args.masks);
    sheet
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
