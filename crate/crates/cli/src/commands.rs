use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::{json, Value};
use xembody::dataset::{
    apply_alignment, compose_cross_product, dataset_digest, import_episodes, read_dataset, stats as dataset_stats,
    write_dataset, Dataset,
};
use xembody::generate::{gen_demo_dataset, gen_paired as generate_paired};
use xembody::geometry::Pose;
use xembody::kinematics::{ChainRegistry, KinematicChain};
use xembody::raster::BackgroundCorpus;
use xembody::sampler::SeedPath;

use crate::config::RunConfig;
use crate::report::RunReport;
use crate::{
    AlignArgs, ComposeArgs, DigestArgs, GenDemoArgs, GenPairedArgs, ImportArgs, PartialFailure, RoAugArgs, StatsArgs,
    ViAugArgs,
};

fn registry() -> Result<ChainRegistry> {
    ChainRegistry::from_env().context("loading robot registry")
}

fn chain<'a>(registry: &'a ChainRegistry, name: &str) -> Result<&'a KinematicChain> {
    Ok(registry.get(name)?.as_ref())
}

/// `--name`, else the output directory's final component.
fn dataset_name(out: &Path, name: Option<String>) -> String {
    name.unwrap_or_else(|| {
        out.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    })
}

fn read(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn write(ds: &Dataset, out: &Path, report: &mut RunReport) -> Result<()> {
    write_dataset(ds, out).with_context(|| format!("writing dataset {}", out.display()))?;
    report.add_output(out, ds.trajectories.len(), ds.frame_count())?;
    info!("wrote {} ({} trajectories, {} frames)", out.display(), ds.trajectories.len(), ds.frame_count());
    Ok(())
}

/// Ends a per-trajectory command: strict mode turns failures into exit 2.
fn finish(cfg: &RunConfig, failed: usize, total: usize) -> Result<()> {
    if failed > 0 {
        warn!("{failed} of {total} trajectories failed");
        if cfg.strict {
            return Err(PartialFailure { failed, total }.into());
        }
    }
    Ok(())
}

pub fn gen_paired(args: GenPairedArgs, mut cfg: RunConfig, workers: usize) -> Result<()> {
    if let Some(n) = args.cameras_per_pose {
        cfg.paired.cameras_per_pose = n;
    }
    if let Some(s) = args.size {
        cfg.paired.camera.width = s;
        cfg.paired.camera.height = s;
    }
    if let Some(t) = args.task {
        cfg.paired.task = t;
    }
    cfg.validate()?;
    let registry = registry()?;
    let chains = args.robots.iter().map(|r| chain(&registry, r)).collect::<Result<Vec<_>>>()?;
    let corpus = args
        .backgrounds
        .as_deref()
        .map(|dir| BackgroundCorpus::load(dir).with_context(|| format!("loading backgrounds from {}", dir.display())))
        .transpose()?;

    let mut report = RunReport::new("gen-paired", &cfg, workers);
    report.inputs.extend(args.backgrounds.clone());
    let out = generate_paired(&chains, args.count, &cfg.paired, &SeedPath::new(cfg.master_seed), corpus.as_ref())?;
    std::fs::create_dir_all(&args.out)?;
    for ds in out.datasets.iter().chain(&out.pasted) {
        write(ds, &args.out.join(&ds.name), &mut report)?;
    }
    let pairs = out.datasets.first().map_or(0, Dataset::frame_count);
    report.details = json!({
        "requested_poses": out.requested,
        "skipped_poses": out.skipped,
        "frames_per_robot": pairs,
    });
    println!(
        "{} poses requested, {} skipped as unreachable, {} frames per robot",
        out.requested, out.skipped, pairs
    );
    report.write(&args.out)
}

pub fn gen_demo(args: GenDemoArgs, mut cfg: RunConfig, workers: usize) -> Result<()> {
    if let Some(n) = args.frames {
        cfg.demo.frames = n;
    }
    if let Some(s) = args.size {
        cfg.demo.camera.width = s;
        cfg.demo.camera.height = s;
    }
    if let Some(t) = args.task {
        cfg.demo.task = t;
    }
    cfg.validate()?;
    let registry = registry()?;
    let robot = chain(&registry, &args.robot)?;
    let name = dataset_name(&args.out, args.name);
    let mut report = RunReport::new("gen-demo", &cfg, workers);
    let ds = gen_demo_dataset(robot, &name, args.count, &cfg.demo, &SeedPath::new(cfg.master_seed))?;
    write(&ds, &args.out, &mut report)?;
    report.write(&args.out)
}

/// Applies `f` to every trajectory in parallel. Failed trajectories are
/// dropped from the output and listed in the report.
fn per_trajectory<R: Send>(
    input: &Dataset,
    f: impl Fn(&xembody::dataset::Trajectory) -> Result<(xembody::dataset::Trajectory, R)> + Sync,
) -> (Vec<xembody::dataset::Trajectory>, Vec<R>, Vec<Value>) {
    let results: Vec<_> = input.trajectories.par_iter().map(|t| (t.id.clone(), f(t))).collect();
    let (mut trajectories, mut reports, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    for (id, r) in results {
        match r {
            Ok((t, rep)) => {
                trajectories.push(t);
                reports.push(rep);
            }
            Err(e) => {
                warn!("{id}: {e:#}");
                failures.push(json!({ "trajectory": id, "error": format!("{e:#}") }));
            }
        }
    }
    (trajectories, reports, failures)
}

pub fn ro_aug(args: RoAugArgs, mut cfg: RunConfig, workers: usize) -> Result<()> {
    if let Some(r) = args.brightness_range {
        cfg.roaug.brightness_range = r;
    }
    cfg.validate()?;
    let registry = registry()?;
    let (source, target) = (chain(&registry, &args.source)?, chain(&registry, &args.target)?);
    let input = read(&args.input)?;
    if let Some(t) = input.trajectories.iter().find(|t| t.robot != source.name()) {
        bail!("trajectory '{}' shows {}, not the source robot {}", t.id, t.robot, source.name());
    }
    let stages = cfg.roaug_stages()?;
    let seed = SeedPath::new(cfg.master_seed);
    let mut report = RunReport::new("ro-aug", &cfg, workers);
    report.inputs.push(args.input.clone());

    let (trajectories, reports, failures) = per_trajectory(&input, |t| {
        Ok(xembody::roaug::ro_aug(t, source, target, &cfg.roaug, &stages, &seed)?)
    });
    let flagged: usize = reports.iter().map(|r| r.failed).sum();
    if flagged > 0 {
        warn!("{flagged} frames could not be translated and show only the inpainted background");
    }
    let ds = Dataset {
        name: dataset_name(&args.out, args.name),
        trajectories,
        metadata: input.metadata.clone(),
    };
    write(&ds, &args.out, &mut report)?;
    let total = input.trajectories.len();
    report.details = json!({ "flagged_frames": flagged, "trajectories": reports });
    report.failures = failures;
    let failed = report.failures.len();
    report.write(&args.out)?;
    finish(&cfg, failed, total)
}

pub fn vi_aug(args: ViAugArgs, mut cfg: RunConfig, workers: usize) -> Result<()> {
    if let Some(m) = args.mode {
        cfg.viaug.mode = m;
    }
    cfg.validate()?;
    let input = read(&args.input)?;
    let synth = cfg.synthesizer()?;
    let seed = SeedPath::new(cfg.master_seed);
    let mut report = RunReport::new("vi-aug", &cfg, workers);
    report.inputs.push(args.input.clone());

    let (trajectories, reports, failures) =
        per_trajectory(&input, |t| Ok(xembody::viaug::vi_aug(t, &cfg.viaug, synth.as_ref(), &seed)?));
    let ds = Dataset {
        name: dataset_name(&args.out, args.name),
        trajectories,
        metadata: input.metadata.clone(),
    };
    write(&ds, &args.out, &mut report)?;
    let total = input.trajectories.len();
    report.details = json!({ "trajectories": reports });
    report.failures = failures;
    let failed = report.failures.len();
    report.write(&args.out)?;
    finish(&cfg, failed, total)
}

pub fn compose(args: ComposeArgs, cfg: RunConfig, workers: usize) -> Result<()> {
    let [a, b, c, d]: [PathBuf; 4] = args
        .inputs
        .clone()
        .try_into()
        .map_err(|v: Vec<PathBuf>| anyhow::anyhow!("compose takes exactly 4 inputs, got {}", v.len()))?;
    let inputs = [&a, &b, &c, &d].map(|p| read(p));
    let [d1_s, d2_t, d2_ts, d1_st] = inputs;
    let name = dataset_name(&args.out, args.name);
    let ds = compose_cross_product(&name, &d1_s?, &d2_t?, &d2_ts?, &d1_st?)?;
    let mut report = RunReport::new("compose", &cfg, workers);
    report.inputs = args.inputs;
    write(&ds, &args.out, &mut report)?;
    let stats = dataset_stats(&ds);
    report.details = json!({ "cells": stats.cells });
    report.write(&args.out)
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let ds = read(&args.input)?;
    let text = serde_json::to_string_pretty(&dataset_stats(&ds))?;
    if let Some(out) = &args.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{text}");
    Ok(())
}

pub fn align(args: AlignArgs, cfg: RunConfig, workers: usize) -> Result<()> {
    if args.transform.len() != 7 {
        bail!("--transform takes 7 numbers, got {}", args.transform.len());
    }
    let t: Pose = serde_json::from_value(json!(args.transform)).context("parsing --transform")?;
    let input = read(&args.input)?;
    let mut ds = apply_alignment(&input, &t);
    ds.name = dataset_name(&args.out, args.name);
    let mut report = RunReport::new("align", &cfg, workers);
    report.inputs.push(args.input);
    report.details = json!({ "transform": t });
    write(&ds, &args.out, &mut report)?;
    report.write(&args.out)
}

pub fn import(args: ImportArgs, cfg: RunConfig, workers: usize) -> Result<()> {
    let name = dataset_name(&args.out, args.name);
    let ds = import_episodes(&args.input, &name).with_context(|| format!("importing {}", args.input.display()))?;
    let mut report = RunReport::new("import", &cfg, workers);
    report.inputs.push(args.input);
    write(&ds, &args.out, &mut report)?;
    report.write(&args.out)
}

pub fn digest(args: DigestArgs) -> Result<()> {
    println!("{}", dataset_digest(&args.input)?);
    Ok(())
}

pub fn plugin_serve() -> Result<()> {
    let registry = registry()?;
    xembody::plugin::serve(&mut std::io::stdin().lock(), &mut std::io::stdout().lock(), &registry)?;
    Ok(())
}
