use std::time::Instant;

use anyhow::{Context, Result};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use xembody::generate::{gen_demo, DemoConfig};
use xembody::geometry::{Pose, Rotation};
use xembody::kinematics::ChainRegistry;
use xembody::raster::{Frame, Mask};
use xembody::roaug::{plate_inpaint, GeometricTranslator, OracleSegmenter, RobotTranslator, Segmenter};
use xembody::sampler::SeedPath;
use xembody::viaug::reproject;

use crate::config::RunConfig;
use crate::{BenchArgs, BenchStage};

/// Throughputs of the learned models these stages stand in for, measured
/// on a single datacenter GPU. Printed for comparison only.
pub const REFERENCE_FPS: [(BenchStage, &str, f64); 4] = [
    (BenchStage::Segment, "segmentation model", 4.1),
    (BenchStage::Translate, "robot-to-robot model", 3.2),
    (BenchStage::Inpaint, "video inpainting model", 4.6),
    (BenchStage::Reproject, "novel-view synthesis model", 1.3),
];

#[derive(Debug, Serialize)]
pub struct Measurement {
    pub stage: String,
    pub workers: usize,
    pub frames: usize,
    pub seconds: f64,
    pub fps: f64,
}

fn stage_name(s: BenchStage) -> &'static str {
    match s {
        BenchStage::Segment => "segment",
        BenchStage::Translate => "translate",
        BenchStage::Inpaint => "inpaint",
        BenchStage::Reproject => "reproject",
        BenchStage::All => "all",
    }
}

struct Workload {
    frames: Vec<Frame>,
    unlabeled: Vec<Frame>,
    holes: Vec<Mask>,
    registry: ChainRegistry,
}

fn workload(n: usize, size: u32, cfg: &RunConfig) -> Result<Workload> {
    let registry = ChainRegistry::builtin();
    let chain = registry.get("arm-A")?.clone();
    let mut demo = DemoConfig {
        frames: n,
        ..cfg.demo.clone()
    };
    demo.camera.width = size;
    demo.camera.height = size;
    let traj = gen_demo(&chain, "bench", &demo, &SeedPath::new(cfg.master_seed)).context("building bench frames")?;
    let holes = traj.frames.iter().map(|f| f.mask.clone().expect("rendered frames carry masks")).collect();
    let unlabeled = traj.frames.iter().map(|f| Frame { mask: None, ..f.clone() }).collect();
    Ok(Workload {
        frames: traj.frames,
        unlabeled,
        holes,
        registry,
    })
}

fn run_stage(stage: BenchStage, w: &Workload) -> Result<()> {
    let a = w.registry.get("arm-A")?;
    let c = w.registry.get("arm-C")?;
    match stage {
        BenchStage::Segment => {
            w.unlabeled
                .par_iter()
                .map(|f| OracleSegmenter.segment(f, a))
                .collect::<Result<Vec<_>, _>>()?;
        }
        BenchStage::Translate => {
            let t = GeometricTranslator::default();
            // Failed frames still cost a full solve, so they count.
            w.frames.par_iter().for_each(|f| {
                let _ = t.translate(f, a, c, None);
            });
        }
        BenchStage::Inpaint => {
            plate_inpaint(&w.frames, &w.holes)?;
        }
        BenchStage::Reproject => {
            let p = Pose::new(Rotation::from_euler(0.05, -0.05, 0.05), [0.1, 0.05, -0.1].into());
            let opts = xembody::viaug::Reprojector::default();
            w.frames
                .par_iter()
                .map(|f| reproject(f, &p, &opts))
                .collect::<Result<Vec<_>, _>>()?;
        }
        BenchStage::All => unreachable!("expanded by the caller"),
    }
    Ok(())
}

fn measure(stage: BenchStage, w: &Workload, workers: usize) -> Result<Measurement> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let start = Instant::now();
    pool.install(|| run_stage(stage, w))?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Measurement {
        stage: stage_name(stage).into(),
        workers,
        frames: w.frames.len(),
        seconds,
        fps: w.frames.len() as f64 / seconds.max(1e-9),
    })
}

pub fn bench(args: BenchArgs, cfg: &RunConfig, workers: usize) -> Result<()> {
    let stages = match args.stage {
        BenchStage::All => vec![BenchStage::Segment, BenchStage::Translate, BenchStage::Inpaint, BenchStage::Reproject],
        s => vec![s],
    };
    let w = workload(args.frames as usize, args.size, cfg)?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut rows = Vec::new();
    for &stage in &stages {
        let single = measure(stage, &w, 1)?;
        let multi = measure(stage, &w, workers.max(1))?;
        if cores >= 4 && workers > 1 && multi.fps < single.fps {
            warn!(
                "{}: {} workers ran slower than one ({:.1} vs {:.1} fps)",
                single.stage, workers, multi.fps, single.fps
            );
        }
        rows.push(single);
        rows.push(multi);
    }

    println!("{:<28} {:>8} {:>8} {:>10} {:>10}", "stage", "workers", "frames", "seconds", "fps");
    for r in &rows {
        println!("{:<28} {:>8} {:>8} {:>10.3} {:>10.1}", r.stage, r.workers, r.frames, r.seconds, r.fps);
    }
    println!();
    println!("reference, non-binding (learned models on one GPU):");
    for (stage, model, fps) in REFERENCE_FPS {
        println!("{:<28} {:>8} {:>8} {:>10} {:>10.1}", format!("{} ({model})", stage_name(stage)), "-", "-", "-", fps);
    }
    if let Some(path) = &args.json {
        let reference: Vec<_> = REFERENCE_FPS
            .iter()
            .map(|(s, m, f)| serde_json::json!({ "stage": stage_name(*s), "model": m, "fps": f, "binding": false }))
            .collect();
        let text = serde_json::to_string_pretty(&serde_json::json!({
            "size": args.size,
            "measurements": rows,
            "reference": reference,
        }))?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
