//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde_json::json;
use vqd_core::checkpoint::Checkpoint;
use vqd_core::dataset::{
    hr_sr_enhance, scene_filter, synth_clips, write_clip, write_manifest, ClipEntry, ClipManifest, Role, SynthConfig,
};
use vqd_core::degrade::{clip_rng, compress, degrade_clip, CompressMethod};
use vqd_core::eval::{clip_mean, nr_iqa_protocol, psnr, save_report, ssim, ReportRow};
use vqd_core::resample::{downscale, ResizeMethod};
use vqd_core::seed::derive;
use vqd_core::vqgan::{
    self, component_rng, load_stage1_model, load_stage2_model, Control, MsVqgan, Stage, StepRecord, TrainObserver,
    VqganTrainer,
};
use vqd_core::vsr::{self, SrStream, VsrObserver, VsrStepRecord, VsrTrainSetup, VsrTrainer};
use vqd_core::{Clip, Error, Frame, Result};

use crate::config::RunConfig;
use crate::log::RunLog;
use crate::{preview, scorer, Command, Common, MetricArg};

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest {
            common,
            input,
            out,
            role,
        } => ingest(&common, &input, &out, role.into()),
        Command::SynthData { common, out } => synth_data(&common, &out),
        Command::EnhanceHr { common, input, out } => enhance_hr(&common, &input, &out),
        Command::TrainDegradation {
            common,
            stage,
            data,
            out,
            init,
            resume,
            snapshot_every,
        } => train_degradation(&common, stage, &data, &out, init.as_deref(), resume.as_deref(), snapshot_every),
        Command::Degrade {
            common,
            model,
            input,
            out,
        } => degrade(&common, model.as_deref(), &input, &out),
        Command::TrainVsr {
            common,
            stage,
            data,
            out,
            degradation_model,
            init,
            snapshot_every,
        } => train_vsr(&common, stage, &data, &out, degradation_model.as_deref(), init.as_deref(), snapshot_every),
        Command::Upscale {
            common,
            model,
            input,
            out,
        } => upscale(&common, &model, &input, &out),
        Command::Eval {
            common,
            metric,
            scorer,
            manifest,
            reference,
            report,
        } => eval(&common, metric, &scorer, &manifest, reference.as_deref(), &report),
        Command::PreviewK {
            common,
            model,
            frame,
            k,
            cols,
            out,
        } => preview_k(&common, &model, &frame, &k, cols, &out),
    }
}

/// Worker threads: the machine's parallelism, capped by `VQD_NUM_WORKERS`.
pub fn workers() -> Result<usize> {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("VQD_NUM_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(cap) if cap >= 1 => Ok(n.min(cap)),
            _ => Err(Error::Config(format!("VQD_NUM_WORKERS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(n),
    }
}

/// Applies `f` to every item on up to `workers` threads, keeping order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn setup(common: &Common, name: &str) -> Result<(RunConfig, RunLog)> {
    let cfg = RunConfig::load_or_default(common.config.as_deref())?;
    workers()?;
    let log_path = common
        .log
        .clone()
        .or_else(|| cfg.paths.log_dir.as_ref().map(|d| d.join(format!("{name}.jsonl"))));
    let mut log = RunLog::open(log_path.as_deref(), name)?;
    log.event("start", json!({"seed": cfg.seed, "preset": cfg.preset}))?;
    Ok((cfg, log))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// PNG files of `dir` in name order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("{} holds no PNG frames", dir.display())));
    }
    Ok(paths)
}

fn load_manifest(path: &Path) -> Result<ClipManifest> {
    let m = ClipManifest::load(path)?;
    m.validate()?;
    Ok(m)
}

fn load_role(m: &ClipManifest, role: Role) -> Result<Vec<Clip>> {
    let clips = m.with_role(role).map(|e| m.load_clip(e)).collect::<Result<Vec<_>>>()?;
    if clips.is_empty() {
        return Err(Error::Empty(format!("manifest has no {role:?} clips")));
    }
    Ok(clips)
}

fn ingest(common: &Common, input: &Path, out: &Path, role: Role) -> Result<()> {
    let (cfg, mut log) = setup(common, "ingest")?;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Empty(format!("{} has no clip subdirectories", input.display())));
    }
    create_dir(out)?;
    let entries = par_map(&dirs, workers()?, |dir| {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let frames = frame_paths(dir)?.iter().map(Frame::load_png).collect::<Result<Vec<_>>>()?;
        let total = frames.len();
        let kept = scene_filter(&Clip::new(frames)?, cfg.dataset.scene_threshold)?;
        Ok((write_clip(out, &id, role, &kept)?, total))
    })?;
    for (e, total) in &entries {
        log.event("clip", json!({"id": e.id, "frames_in": total, "frames_kept": e.frames.len()}))?;
    }
    ClipManifest::new(entries.into_iter().map(|(e, _)| e).collect(), out).save(out.join("manifest.json"))?;
    log.event("done", json!({}))
}

/// Writes `out/manifest.json` with lq-train, hr-train and test clips, and
/// `out/test-lr/manifest.json` with the test clips bicubic-downscaled by the
/// VSR scale.
fn synth_data(common: &Common, out: &Path) -> Result<()> {
    let (cfg, mut log) = setup(common, "synth-data")?;
    let d = &cfg.dataset;
    let mut rng = component_rng(cfg.seed, "synth-data");
    let lq = synth_clips(&d.synth, &mut rng)?;
    let hr_cfg = |clips| SynthConfig {
        clips,
        size: d.synth_hr_size,
        ..d.synth.clone()
    };
    let hr = synth_clips(&hr_cfg(d.synth_hr_clips), &mut rng)?;
    let test = synth_clips(&hr_cfg(d.synth_test_clips), &mut rng)?;
    let q = d.synth_lq_quality;
    let mut all = Vec::new();
    for (i, c) in lq.into_iter().enumerate() {
        all.push((format!("lq-{i:03}"), Role::LqTrain, compress(&c, q, CompressMethod::BuiltinDct)?));
    }
    for (i, c) in hr.into_iter().enumerate() {
        all.push((format!("hr-{i:03}"), Role::HrTrain, c));
    }
    let mut test_lr = Vec::new();
    for (i, c) in test.into_iter().enumerate() {
        let lr = c
            .frames
            .iter()
            .map(|f| downscale(f, cfg.vsr.scale, ResizeMethod::Bicubic))
            .collect::<Result<Vec<_>>>()?;
        test_lr.push((format!("test-{i:03}"), Role::Test, Clip::new(lr)?));
        all.push((format!("test-{i:03}"), Role::Test, c));
    }
    let m = write_manifest(out, &all)?;
    write_manifest(&out.join("test-lr"), &test_lr)?;
    log.event("done", json!({"clips": m.clips.len(), "test_lr": test_lr.len()}))
}

fn enhance_hr(common: &Common, input: &Path, out: &Path) -> Result<()> {
    let (cfg, mut log) = setup(common, "enhance-hr")?;
    let m = load_manifest(input)?;
    let enhancer = cfg.dataset.enhancer.build();
    create_dir(out)?;
    let entries = par_map(&m.clips, workers()?, |e| {
        let clip = m.load_clip(e)?;
        let clip = if e.role == Role::HrTrain {
            Clip::new(
                clip.frames
                    .iter()
                    .map(|f| hr_sr_enhance(f, enhancer.as_ref()))
                    .collect::<Result<Vec<_>>>()?,
            )?
        } else {
            clip
        };
        write_clip(out, &e.id, e.role, &clip)
    })?;
    let n = entries.iter().filter(|e| e.role == Role::HrTrain).count();
    ClipManifest::new(entries, out).save(out.join("manifest.json"))?;
    log.event("done", json!({"enhanced_clips": n}))
}

struct DegradationObserver<'a> {
    log: &'a mut RunLog,
    out: &'a Path,
    snapshot_every: usize,
}

impl TrainObserver for DegradationObserver<'_> {
    fn on_step(&mut self, rec: &StepRecord) -> Result<Control> {
        self.log.event("step", serde_json::to_value(rec)?)?;
        Ok(Control::Continue)
    }

    fn snapshot_every(&self) -> usize {
        self.snapshot_every
    }

    fn on_snapshot(&mut self, t: &VqganTrainer) -> Result<()> {
        let path = with_suffix(self.out, ".snapshot");
        t.to_checkpoint()?.save(&path)?;
        self.log.event("snapshot", json!({"step": t.step, "path": path}))
    }

    fn on_failure(&mut self, t: &VqganTrainer, detail: &str) -> Result<()> {
        let path = with_suffix(self.out, ".failed");
        t.to_checkpoint()?.save(&path)?;
        self.log.event("failure", json!({"step": t.step, "detail": detail, "path": path}))
    }
}

fn train_degradation(
    common: &Common,
    stage: u8,
    data: &Path,
    out: &Path,
    init: Option<&Path>,
    resume: Option<&Path>,
    snapshot_every: usize,
) -> Result<()> {
    let (cfg, mut log) = setup(common, "train-degradation")?;
    let stage = Stage::from_number(stage)?;
    let mcfg = cfg.degradation_model.clone().with_stage(stage);
    mcfg.validate()?;
    let m = load_manifest(data)?;
    let images: Vec<Frame> = load_role(&m, Role::LqTrain)?.into_iter().flat_map(|c| c.frames).collect();
    let mut rng = component_rng(cfg.seed, &format!("train-degradation/{}", stage.number()));
    let mut obs = DegradationObserver {
        log: &mut log,
        out,
        snapshot_every,
    };
    let trainer = match (resume, stage) {
        (Some(r), _) => {
            let mut t = VqganTrainer::resume(&Checkpoint::load(r)?, &mcfg, derive(cfg.seed, "train-degradation/resume"))?;
            let remaining = mcfg.schedule().steps.saturating_sub(t.step);
            t.run(&images, remaining, &mut rng, &mut obs)?;
            t
        }
        (None, Stage::Stage1) => vqgan::train_stage1(&images, &mcfg, &mut rng, &mut obs)?,
        (None, Stage::Stage2) => {
            let path = init.ok_or_else(|| Error::Config("stage 2 needs --init <stage-1 checkpoint>".into()))?;
            let s1 = load_stage1_model(&Checkpoint::load(path)?)?;
            vqgan::train_stage2(&s1, &images, &mcfg, &mut rng, &mut obs)?
        }
    };
    trainer.to_checkpoint()?.save(out)?;
    log.event("done", json!({"step": trainer.step, "out": out}))
}

fn degradation_model(cfg: &RunConfig, flag: Option<&Path>) -> Result<MsVqgan<f32>> {
    let path = flag
        .or(cfg.degradation.vqd.checkpoint.as_deref())
        .ok_or_else(|| Error::Config("the learned degradation stage needs --model or degradation.vqd.checkpoint".into()))?;
    load_stage2_model(&Checkpoint::load(path)?)
}

fn degrade(common: &Common, model: Option<&Path>, input: &Path, out: &Path) -> Result<()> {
    let (cfg, mut log) = setup(common, "degrade")?;
    cfg.degradation.validate()?;
    let model = if cfg.degradation.vqd.enable {
        Some(degradation_model(&cfg, model)?)
    } else {
        None
    };
    let m = load_manifest(input)?;
    create_dir(out)?;
    let master = derive(derive(cfg.seed, "degrade"), &cfg.degradation.seed.to_string());
    let entries = par_map(&m.clips, workers()?, |e| {
        let hr = m.load_clip(e)?;
        let lr = degrade_clip(&hr, &cfg.degradation, model.as_ref(), &mut clip_rng(master, &e.id))?;
        write_clip(out, &e.id, e.role, &lr)
    })?;
    let n = entries.len();
    ClipManifest::new(entries, out).save(out.join("manifest.json"))?;
    log.event("done", json!({"clips": n}))
}

struct VsrLogObserver<'a> {
    log: &'a mut RunLog,
    out: &'a Path,
    snapshot_every: usize,
}

impl VsrObserver for VsrLogObserver<'_> {
    fn on_step(&mut self, rec: &VsrStepRecord) -> Result<Control> {
        self.log.event("step", serde_json::to_value(rec)?)?;
        Ok(Control::Continue)
    }

    fn snapshot_every(&self) -> usize {
        self.snapshot_every
    }

    fn on_snapshot(&mut self, t: &VsrTrainer) -> Result<()> {
        let path = with_suffix(self.out, ".snapshot");
        t.to_checkpoint()?.save(&path)?;
        self.log.event("snapshot", json!({"step": t.step, "path": path}))
    }

    fn on_failure(&mut self, t: &VsrTrainer, detail: &str) -> Result<()> {
        let path = with_suffix(self.out, ".failed");
        t.to_checkpoint()?.save(&path)?;
        self.log.event("failure", json!({"step": t.step, "detail": detail, "path": path}))
    }
}

fn train_vsr(
    common: &Common,
    stage: u8,
    data: &Path,
    out: &Path,
    deg_model: Option<&Path>,
    init: Option<&Path>,
    snapshot_every: usize,
) -> Result<()> {
    let (cfg, mut log) = setup(common, "train-vsr")?;
    cfg.vsr.schedule(stage)?;
    let m = load_manifest(data)?;
    let mut hr = load_role(&m, Role::HrTrain)?;
    let model = if stage == 2 && cfg.degradation.vqd.enable {
        Some(degradation_model(&cfg, deg_model)?)
    } else {
        None
    };
    let init = match init {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            ckpt.expect_stage(1)?;
            Some(vsr::from_checkpoint(&ckpt)?.0)
        }
        None => None,
    };
    if stage == 2 && cfg.dataset.enhance_gt {
        let enhancer = cfg.dataset.enhancer.build();
        hr = par_map(&hr, workers()?, |c| {
            Clip::new(
                c.frames
                    .iter()
                    .map(|f| hr_sr_enhance(f, enhancer.as_ref()))
                    .collect::<Result<Vec<_>>>()?,
            )
        })?;
        log.event("enhanced-targets", json!({"clips": hr.len()}))?;
    }
    let setup = VsrTrainSetup {
        stage,
        cfg: &cfg.vsr,
        degradation: &cfg.degradation,
        degradation_model: model.as_ref(),
        init: init.as_ref(),
        seed: derive(cfg.seed, "train-vsr"),
        workers: workers()?,
    };
    let mut obs = VsrLogObserver {
        log: &mut log,
        out,
        snapshot_every,
    };
    let trainer = vsr::train_vsr(&hr, &setup, &mut obs)?;
    trainer.to_checkpoint()?.save(out)?;
    log.event("done", json!({"step": trainer.step, "out": out}))
}

fn upscale_frames(net: &vsr::VsrNet, frames: impl Iterator<Item = Result<Frame>>, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut stream = SrStream::new(net);
    let mut written = Vec::new();
    let save = |f: Frame, written: &mut Vec<PathBuf>| -> Result<()> {
        let name = PathBuf::from(format!("{:05}.png", written.len()));
        f.save_png(dir.join(&name))?;
        written.push(name);
        Ok(())
    };
    for f in frames {
        if let Some(sr) = stream.push(f?)? {
            save(sr, &mut written)?;
        }
    }
    match stream.finish()? {
        Some(sr) => save(sr, &mut written)?,
        None => return Err(Error::Empty("cannot upscale an empty clip".into())),
    }
    Ok(written)
}

fn upscale(common: &Common, model: &Path, input: &Path, out: &Path) -> Result<()> {
    let (_cfg, mut log) = setup(common, "upscale")?;
    let (net, _) = vsr::from_checkpoint(&Checkpoint::load(model)?)?;
    if input.is_dir() {
        let n = upscale_frames(&net, frame_paths(input)?.into_iter().map(Frame::load_png), out)?.len();
        return log.event("done", json!({"frames": n}));
    }
    let m = load_manifest(input)?;
    create_dir(out)?;
    let entries = par_map(&m.clips, workers()?, |e| {
        let names = upscale_frames(&net, e.frames.iter().map(|p| Frame::load_png(m.resolve(p))), &out.join(&e.id))?;
        Ok(ClipEntry {
            id: e.id.clone(),
            role: e.role,
            frames: names.into_iter().map(|n| PathBuf::from(&e.id).join(n)).collect(),
            width: e.width * net.config().scale,
            height: e.height * net.config().scale,
        })
    })?;
    let n = entries.len();
    ClipManifest::new(entries, out).save(out.join("manifest.json"))?;
    log.event("done", json!({"clips": n}))
}

fn eval(
    common: &Common,
    metric: MetricArg,
    scorer_spec: &str,
    manifest: &Path,
    reference: Option<&Path>,
    report: &Path,
) -> Result<()> {
    let (cfg, mut log) = setup(common, "eval")?;
    let m = load_manifest(manifest)?;
    let rows = match metric {
        MetricArg::Psnr | MetricArg::Ssim => {
            let r = load_manifest(
                reference.ok_or_else(|| Error::Config("psnr and ssim need --reference <manifest>".into()))?,
            )?;
            let (name, f): (&str, fn(&Frame, &Frame) -> Result<f64>) = match metric {
                MetricArg::Psnr => ("psnr", psnr),
                _ => ("ssim", ssim),
            };
            par_map(&m.clips, workers()?, |e| {
                let re = r
                    .clips
                    .iter()
                    .find(|c| c.id == e.id)
                    .ok_or_else(|| Error::Contract(format!("reference manifest has no clip {}", e.id)))?;
                let value = clip_mean(&m.load_clip(e)?, &r.load_clip(re)?, f)?;
                Ok(ReportRow {
                    clip_id: e.id.clone(),
                    metric: name.into(),
                    value,
                })
            })?
        }
        MetricArg::Nriqa => {
            let s = scorer::parse(scorer_spec)?;
            m.clips
                .iter()
                .map(|e| {
                    let res = nr_iqa_protocol(&m.load_clip(e)?, s.as_ref(), &cfg.eval)?;
                    Ok(ReportRow {
                        clip_id: e.id.clone(),
                        metric: "nriqa".into(),
                        value: res.mean,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    for r in &rows {
        log.event("score", json!({"clip_id": r.clip_id, "metric": r.metric, "value": r.value}))?;
    }
    save_report(&rows, report)?;
    log.event("done", json!({"clips": rows.len()}))
}

fn preview_k(common: &Common, model: &Path, frame: &Path, k: &str, cols: Option<usize>, out: &Path) -> Result<()> {
    let (_cfg, mut log) = setup(common, "preview-k")?;
    let ks = preview::parse_k_list(k)?;
    let model = load_stage2_model(&Checkpoint::load(model)?)?;
    let grid = preview::preview_grid(&Frame::load_png(frame)?, &model, &ks, cols)?;
    grid.image.save_png(out)?;
    log.event("done", json!({"cells": ks.len(), "k": ks}))
}

