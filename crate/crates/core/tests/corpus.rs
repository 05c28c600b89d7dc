use std::path::PathBuf;

use image::{Rgb, RgbImage};
use xembody::raster::BackgroundCorpus;
use xembody::sampler::SeedPath;

#[test]
fn background_choice_is_uniform() {
    let images = (0..8u8)
        .map(|i| (PathBuf::from(format!("bg{i}.png")), RgbImage::from_pixel(4, 4, Rgb([i, i, i]))))
        .collect();
    let corpus = BackgroundCorpus::from_images(images).unwrap();
    let seed = SeedPath::new(3);
    let n = 16_000;
    let mut counts = [0u32; 8];
    for k in 0..n {
        counts[corpus.choose(&seed.child("paste", k, 0))] += 1;
    }
    // Chi-squared with 7 degrees of freedom; 0.999 quantile is about 24.3.
    let expected = f64::from(n as u32) / 8.0;
    let chi2: f64 = counts.iter().map(|&c| (f64::from(c) - expected).powi(2) / expected).sum();
    assert!(chi2 < 24.3, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn load_skips_undecodable_files() {
    let dir = tempfile::tempdir().unwrap();
    RgbImage::from_pixel(6, 4, Rgb([1, 2, 3])).save(dir.path().join("b.png")).unwrap();
    RgbImage::from_pixel(4, 6, Rgb([4, 5, 6])).save(dir.path().join("a.png")).unwrap();
    std::fs::write(dir.path().join("c.png"), b"not an image").unwrap();
    let corpus = BackgroundCorpus::load(dir.path()).unwrap();
    assert_eq!(corpus.len(), 2);
    assert!(corpus.path(0).ends_with("a.png"));
    let plate = corpus.plate(1, 3, 3);
    assert_eq!(plate.rgb.dimensions(), (3, 3));
    assert_eq!(plate.rgb.get_pixel(1, 1).0, [1, 2, 3]);
}
