use std::sync::Arc;

use xembody::dataset::Trajectory;
use xembody::generate::{gen_demo, DemoConfig};
use xembody::kinematics::{ChainRegistry, KinematicChain};
use xembody::raster::{render, rgb_to_hsv, shift_value, Frame, Mask};
use xembody::roaug::{
    plate_inpaint, ro_aug, GeometricTranslator, RoAugConfig, RoAugStages, RobotTranslator, StageError,
};
use xembody::sampler::SeedPath;

fn chain(name: &str) -> Arc<KinematicChain> {
    ChainRegistry::builtin().get(name).unwrap().clone()
}

fn demo(robot: &KinematicChain, frames: usize, size: u32, seed: u64) -> Trajectory {
    let mut cfg = DemoConfig {
        frames,
        ..DemoConfig::default()
    };
    cfg.camera.width = size;
    cfg.camera.height = size;
    gen_demo(robot, "demo", &cfg, &SeedPath::new(seed)).unwrap()
}

fn pose_action_bits(t: &Trajectory) -> Vec<String> {
    t.frames
        .iter()
        .map(|f| serde_json::to_string(&(f.gripper_pose, f.action)).unwrap())
        .collect()
}

fn mean_value(rgb: &image::RgbImage, mask: &Mask) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, &m) in rgb.pixels().zip(mask.as_slice()) {
        if m {
            sum += rgb_to_hsv(p.0).v;
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

#[test]
fn self_translation_is_a_fixed_point() {
    let a = chain("arm-A");
    let traj = demo(&a, 8, 64, 1);
    let cfg = RoAugConfig {
        brightness_range: 0,
        ..RoAugConfig::default()
    };
    let (out, report) = ro_aug(&traj, &a, &a, &cfg, &RoAugStages::default(), &SeedPath::new(5)).unwrap();
    assert_eq!(report.failed, 0);
    for (i, (o, f)) in out.frames.iter().zip(&traj.frames).enumerate() {
        assert!(o.rgb == f.rgb, "frame {i} rgb differs");
        assert_eq!(o.mask, f.mask, "frame {i}");
        assert_eq!(o.action, f.action);
    }
}

#[test]
fn brightness_shift_of_robot_region_is_bounded() {
    let (a, b) = (chain("arm-A"), chain("arm-B"));
    let traj = demo(&a, 12, 64, 2);
    let (out, report) =
        ro_aug(&traj, &a, &b, &RoAugConfig::default(), &RoAugStages::default(), &SeedPath::new(6)).unwrap();
    let mut nonzero = 0;
    for (o, r) in out.frames.iter().zip(&report.frames) {
        assert!((-30..=30).contains(&r.brightness_delta));
        nonzero += usize::from(r.brightness_delta != 0);
        let Some(q) = &o.joints else { continue };
        let mask = o.mask.as_ref().unwrap();
        if mask.is_empty() {
            continue;
        }
        let layer = render(&b, q, &o.camera).unwrap();
        let shift = mean_value(&o.rgb, mask) - mean_value(&layer.rgb, mask);
        assert!(shift.abs() <= 30.0 + 1e-9, "mean value shift {shift}");
        // Each pasted pixel is the layer pixel shifted by the frame's delta.
        for (i, &m) in mask.as_slice().iter().enumerate() {
            if m {
                let (x, y) = (i as u32 % 64, i as u32 / 64);
                let expected = shift_value(layer.rgb.get_pixel(x, y).0, r.brightness_delta);
                assert_eq!(o.rgb.get_pixel(x, y).0, expected);
            }
        }
    }
    assert!(nonzero > 0);
}

#[test]
fn hundred_frames_keep_the_observation_only_contract() {
    let (a, c) = (chain("arm-A"), chain("arm-C"));
    let traj = demo(&a, 100, 32, 3);
    let (out, report) =
        ro_aug(&traj, &a, &c, &RoAugConfig::default(), &RoAugStages::default(), &SeedPath::new(7)).unwrap();
    assert_eq!(report.frames.len(), 100);
    assert_eq!(out.frames.len(), 100);
    assert_eq!(pose_action_bits(&out), pose_action_bits(&traj));
    assert_eq!(out.robot, "arm-C");
    assert_eq!(out.provenance.last().unwrap().stage, "ro-aug:arm-A->arm-C");
}

#[test]
fn target_tip_projects_onto_source_tip() {
    let (a, c) = (chain("arm-A"), chain("arm-C"));
    let traj = demo(&a, 20, 256, 4);
    let (out, report) =
        ro_aug(&traj, &a, &c, &RoAugConfig::default(), &RoAugStages::default(), &SeedPath::new(8)).unwrap();
    assert_eq!(report.failed, 0, "{report:?}");
    for (o, f) in out.frames.iter().zip(&traj.frames) {
        let tip = c.forward_kinematics(o.joints.as_ref().unwrap()).unwrap().tip;
        let (u0, v0, _) = f.camera.project(&f.gripper_pose.translation).unwrap();
        let (u1, v1, _) = o.camera.project(&tip.translation).unwrap();
        assert!((u0 - u1).hypot(v0 - v1) <= 2.0);
    }
}

#[test]
fn self_translation_from_previous_seed_keeps_the_mask() {
    let a = chain("arm-A");
    let traj = demo(&a, 10, 96, 5);
    let translator = GeometricTranslator::default();
    let mut previous = None;
    for f in &traj.frames {
        // Without recorded joints the solver starts from home or the
        // previous solution, like a cross-robot translation would.
        let stripped = Frame { joints: None, ..f.clone() };
        let layer = translator.translate(&stripped, &a, &a, previous.as_ref()).unwrap();
        let source = render(&a, f.joints.as_ref().unwrap(), &f.camera).unwrap();
        let iou = source.mask.as_ref().unwrap().iou(&layer.mask);
        assert!(iou >= 0.99, "iou {iou}");
        previous = layer.joints;
    }
}

#[test]
fn seeded_ik_is_continuous_for_small_steps() {
    let (a, b) = (chain("arm-A"), chain("arm-B"));
    let traj = demo(&a, 120, 16, 6);
    let steps: Vec<f64> = traj
        .frames
        .windows(2)
        .map(|w| (w[1].gripper_pose.translation - w[0].gripper_pose.translation).norm())
        .collect();
    assert!(steps.iter().all(|s| *s <= 0.01), "max step {:?}", steps.iter().cloned().fold(0.0, f64::max));
    let translator = GeometricTranslator::default();
    let mut previous = None;
    for f in &traj.frames {
        let layer = translator.translate(f, &a, &b, previous.as_ref()).unwrap();
        let q = layer.joints.unwrap();
        if let Some(p) = &previous {
            assert!(q.distance(p) <= 0.3, "jump {}", q.distance(p));
        }
        previous = Some(q);
    }
}

#[test]
fn inpainting_recovers_the_static_background_where_exposed() {
    let a = chain("arm-A");
    let mut cfg = DemoConfig {
        frames: 12,
        ..DemoConfig::default()
    };
    cfg.camera.width = 64;
    cfg.camera.height = 64;
    let traj = gen_demo(&a, "demo", &cfg, &SeedPath::new(9)).unwrap();
    let plate = cfg.backdrop.render(&traj.frames[0].camera);
    let holes: Vec<Mask> = traj.frames.iter().map(|f| f.mask.clone().unwrap()).collect();
    let filled = plate_inpaint(&traj.frames, &holes).unwrap();
    let exposed = |i: usize| holes.iter().any(|m| !m.as_slice()[i]);
    let mut checked = 0;
    for (f, m) in filled.iter().zip(&holes) {
        for (i, &hole) in m.as_slice().iter().enumerate() {
            let (x, y) = (i as u32 % 64, i as u32 / 64);
            if hole && exposed(i) {
                assert_eq!(f.rgb.get_pixel(x, y), plate.rgb.get_pixel(x, y));
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

struct Flaky;

impl RobotTranslator for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn translate(
        &self,
        frame: &Frame,
        source: &KinematicChain,
        target: &KinematicChain,
        previous: Option<&xembody::kinematics::JointConfig>,
    ) -> Result<xembody::roaug::RobotLayer, StageError> {
        if frame.action.is_some_and(|a| a.gripper > 0.5) {
            return Err(StageError::Invalid("closed gripper".into()));
        }
        GeometricTranslator::default().translate(frame, source, target, previous)
    }
}

#[test]
fn translator_failures_are_flagged_or_fatal() {
    let (a, b) = (chain("arm-A"), chain("arm-B"));
    let traj = demo(&a, 10, 32, 10);
    let stages = RoAugStages {
        translator: Arc::new(Flaky),
        ..RoAugStages::default()
    };
    let (out, report) = ro_aug(&traj, &a, &b, &RoAugConfig::default(), &stages, &SeedPath::new(1)).unwrap();
    assert!(report.failed > 0 && report.translated > 0);
    assert_eq!(out.frames.len(), traj.frames.len());
    for (o, r) in out.frames.iter().zip(&report.frames) {
        assert_eq!(r.translated, o.joints.is_some());
        assert_eq!(r.error.is_some(), !r.translated);
    }
    let strict = RoAugConfig {
        strict: true,
        ..RoAugConfig::default()
    };
    assert!(ro_aug(&traj, &a, &b, &strict, &stages, &SeedPath::new(1)).is_err());
}
