//! Hexcone HSV with the value channel on the 0..=255 scale, and the
//! mask-based composite used to paste robot layers onto plates.

use image::Rgb;

use super::{BackgroundPlate, DepthMap, Frame, RasterError};

/// Hue in degrees `[0, 360)`, saturation in `[0, 1]`, value in `[0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let s = if max == 0.0 { 0.0 } else { c / max };
    let h = if c == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / c + 2.0)
    } else {
        60.0 * ((r - g) / c + 4.0)
    };
    Hsv { h, s, v: max }
}

/// Channels round half up and clamp to `0..=255`.
pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let c = hsv.v * hsv.s;
    let hp = hsv.h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let m = hsv.v - c;
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|v| (v + m + 0.5).floor().clamp(0.0, 255.0) as u8)
}

/// Adds `delta` to the HSV value channel, clamped to `[0, 255]`.
pub fn shift_value(rgb: [u8; 3], delta: i32) -> [u8; 3] {
    if delta == 0 {
        return rgb;
    }
    let mut hsv = rgb_to_hsv(rgb);
    hsv.v = (hsv.v + delta as f64).clamp(0.0, 255.0);
    hsv_to_rgb(hsv)
}

/// Pastes the masked pixels of `fg` onto `plate`, shifting their HSV value
/// by `delta`. Depth follows the same mask: robot depth inside, plate depth
/// (or 0 without one) outside. Mask and metadata come from `fg`.
pub fn composite(fg: &Frame, plate: &BackgroundPlate, delta: i32) -> Result<Frame, RasterError> {
    let mask = fg.mask.as_ref().ok_or(RasterError::MissingMask)?;
    let dims = fg.rgb.dimensions();
    if plate.rgb.dimensions() != dims {
        return Err(RasterError::DimensionMismatch(format!(
            "layer {dims:?} vs plate {:?}",
            plate.rgb.dimensions()
        )));
    }
    if let Some(d) = &plate.depth {
        if d.dimensions() != dims {
            return Err(RasterError::DimensionMismatch(format!(
                "layer {dims:?} vs plate depth {:?}",
                d.dimensions()
            )));
        }
    }
    let mut rgb = plate.rgb.clone();
    let mut depth = plate.depth.clone().unwrap_or_else(|| DepthMap::new(dims.0, dims.1));
    for (x, y, px) in fg.rgb.enumerate_pixels() {
        if mask.get(x, y) {
            rgb.put_pixel(x, y, Rgb(shift_value(px.0, delta)));
            depth.set(x, y, fg.depth.get(x, y));
        }
    }
    Ok(Frame {
        rgb,
        depth,
        ..fg.clone()
    })
}
