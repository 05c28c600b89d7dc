//! Sampler distributions against independent oracles.

use nalgebra::Vector3;
use xembody::sampler::{
    sample_brightness_delta, sample_camera_detailed, sample_robot_pose, sample_view_perturbation, CameraSamplerConfig,
    RobotPoseSamplerConfig, SeedPath, ViAugConfig,
};

/// SplitMix64, so the oracle shares no code with the sampler's streams.
struct SplitMix(u64);

impl SplitMix {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in (0, 1].
    fn unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    fn box_muller(&mut self) -> f64 {
        let (u1, u2) = (self.unit(), self.unit());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Rejection-sampled moments of `N(mean, std)` restricted to `(lo, hi)`.
fn truncated_oracle(mean: f64, std: f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let mut rng = SplitMix(0x5EED);
    let mut xs = Vec::with_capacity(n);
    while xs.len() < n {
        let x = mean + std * rng.box_muller();
        if x > lo && x < hi {
            xs.push(x);
        }
    }
    moments(&xs)
}

#[test]
fn camera_radius_matches_truncated_normal_oracle() {
    let cfg = CameraSamplerConfig::default();
    let mut rng = SeedPath::new(7).child("oracle", 0, 0).stream();
    let gripper = Vector3::new(0.0, 0.0, 1.0);
    let radii: Vec<f64> = (0..100_000)
        .map(|_| sample_camera_detailed(&cfg, &gripper, &mut rng).radius)
        .collect();
    let (mean, std) = moments(&radii);
    let (omean, ostd) = truncated_oracle(cfg.radius.mean, cfg.radius.std, cfg.radius_min, f64::INFINITY, 400_000);
    assert!((mean - omean).abs() < 0.01, "mean {mean} vs oracle {omean}");
    assert!((std - ostd).abs() < 0.01, "std {std} vs oracle {ostd}");
    assert!((omean - 0.85).abs() < 0.01 && (ostd - 0.2).abs() < 0.01);
    assert!(radii.iter().all(|r| *r > cfg.radius_min));
}

#[test]
fn camera_zenith_matches_oracle() {
    let cfg = CameraSamplerConfig::default();
    let mut rng = SeedPath::new(8).stream();
    let zs: Vec<f64> = (0..50_000)
        .map(|_| sample_camera_detailed(&cfg, &Vector3::zeros(), &mut rng).zenith)
        .collect();
    let [lo, hi] = cfg.zenith_range;
    let (mean, std) = moments(&zs);
    let (omean, ostd) = truncated_oracle(cfg.zenith.mean, cfg.zenith.std, lo, hi, 200_000);
    assert!((mean - omean).abs() < 0.01, "mean {mean} vs oracle {omean}");
    assert!((std - ostd).abs() < 0.01, "std {std} vs oracle {ostd}");
}

#[test]
fn fov_and_pose_box_bounds() {
    let ccfg = CameraSamplerConfig::default();
    let rcfg = RobotPoseSamplerConfig::default();
    let mut rng = SeedPath::new(9).stream();
    for _ in 0..20_000 {
        let pose = sample_robot_pose(&rcfg, &mut rng);
        for i in 0..3 {
            assert!((rcfg.box_min[i]..=rcfg.box_max[i]).contains(&pose.translation[i]));
        }
        let cam = sample_camera_detailed(&ccfg, &pose.translation, &mut rng).camera;
        let fov = cam.intrinsics.fov_deg();
        assert!((40.0..=70.0).contains(&fov), "fov {fov}");
    }
}

#[test]
fn brightness_deltas_cover_range_uniformly() {
    let mut rng = SeedPath::new(10).stream();
    let mut counts = [0u32; 61];
    let n = 61_000;
    for _ in 0..n {
        let d = sample_brightness_delta(30, &mut rng);
        assert!((-30..=30).contains(&d));
        counts[(d + 30) as usize] += 1;
    }
    // Chi-squared with 60 degrees of freedom; 0.999 quantile is about 99.6.
    let expected = n as f64 / 61.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 99.6, "chi2 {chi2}");
}

#[test]
fn view_perturbations_respect_bounds() {
    let cfg = ViAugConfig::default();
    let mut rng = SeedPath::new(11).stream();
    let mut max = [0.0f64; 6];
    for _ in 0..10_000 {
        let p = sample_view_perturbation(&cfg, &mut rng);
        assert!(p.translation[0].abs() <= 0.25 && p.translation[2].abs() <= 0.25);
        assert!(p.translation[1].abs() <= 0.1);
        assert!(p.euler.iter().all(|e| e.abs() <= 0.1));
        for i in 0..3 {
            max[i] = max[i].max(p.translation[i].abs());
            max[3 + i] = max[3 + i].max(p.euler[i].abs());
        }
    }
    // The ranges are actually used, not just respected.
    assert!(max[0] > 0.24 && max[1] > 0.09 && max[5] > 0.09, "{max:?}");
}
