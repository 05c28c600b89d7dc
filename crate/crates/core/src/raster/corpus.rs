//! Background image corpora for pasting robot layers.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use log::warn;
use rand::Rng;
use rayon::prelude::*;

use super::{composite, BackgroundPlate, Frame, RasterError};
use crate::sampler::{sample_brightness_delta, SeedPath};

/// Decoded images from a directory, sorted by file name.
#[derive(Debug, Clone)]
pub struct BackgroundCorpus {
    images: Vec<(PathBuf, RgbImage)>,
}

/// What was drawn for one pasted frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PasteInfo {
    pub plate_index: usize,
    pub brightness_delta: i32,
}

impl BackgroundCorpus {
    /// Loads every decodable image in `dir` (not recursive). Files that fail
    /// to decode are skipped with a warning.
    pub fn load(dir: &Path) -> Result<Self, RasterError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let images: Vec<_> = paths
            .into_par_iter()
            .filter_map(|p| match image::open(&p) {
                Ok(img) => Some((p, img.to_rgb8())),
                Err(e) => {
                    warn!("skipping background {}: {e}", p.display());
                    None
                }
            })
            .collect();
        Self::from_images(images).map_err(|_| RasterError::EmptyCorpus(dir.display().to_string()))
    }

    pub fn from_images(images: Vec<(PathBuf, RgbImage)>) -> Result<Self, RasterError> {
        if images.is_empty() {
            return Err(RasterError::EmptyCorpus("<memory>".into()));
        }
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn path(&self, index: usize) -> &Path {
        &self.images[index].0
    }

    /// Index drawn uniformly from the stream of `seed`.
    pub fn choose(&self, seed: &SeedPath) -> usize {
        seed.stream().random_range(0..self.images.len())
    }

    /// Image `index` scaled (bilinear) to cover `width`×`height`, then
    /// center-cropped.
    pub fn plate(&self, index: usize, width: u32, height: u32) -> BackgroundPlate {
        BackgroundPlate::new(aspect_fill(&self.images[index].1, width, height))
    }
}

fn aspect_fill(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    if (w, h) == (width, height) {
        return img.clone();
    }
    let scale = (width as f64 / w as f64).max(height as f64 / h as f64);
    let sw = ((w as f64 * scale).ceil() as u32).max(width);
    let sh = ((h as f64 * scale).ceil() as u32).max(height);
    let scaled = imageops::resize(img, sw, sh, FilterType::Triangle);
    imageops::crop_imm(&scaled, (sw - width) / 2, (sh - height) / 2, width, height).to_image()
}

/// Pastes each frame's robot layer onto a corpus image. Frame `i` draws its
/// plate from `seed.child("paste", trajectory, i)` and its brightness delta
/// (uniform in `±brightness_range`) from `seed.child("paste-brightness",
/// trajectory, i)`.
pub fn paste_on_background_corpus(
    frames: &[Frame],
    corpus: &BackgroundCorpus,
    seed: &SeedPath,
    trajectory: u64,
    brightness_range: u32,
) -> Result<Vec<(Frame, PasteInfo)>, RasterError> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let plate_index = corpus.choose(&seed.child("paste", trajectory, i as u64));
            let mut stream = seed.child("paste-brightness", trajectory, i as u64).stream();
            let brightness_delta = sample_brightness_delta(brightness_range, &mut stream);
            let (w, h) = frame.dimensions();
            let out = composite(frame, &corpus.plate(plate_index, w, h), brightness_delta)?;
            Ok((
                out,
                PasteInfo {
                    plate_index,
                    brightness_delta,
                },
            ))
        })
        .collect()
}
