//! Subcommand implementations over resolved settings.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use traverse_core::dataset::{
    self, annotation_path, load_frame, read_annotation, resize_shortest_side, write_atomic, write_manifest, FrameRecord,
    Manifest, Sample, SelectionConfig,
};
use traverse_core::eval::{self, EvalConfig};
use traverse_core::model::checkpoint::Checkpoint;
use traverse_core::nav::{self, CameraOraclePolicy, NavConfig, OraclePolicy, Policy, Pose2, Rect, SimConfig, World};
use traverse_core::synth::{self, GroundStyle, SceneConfig};
use traverse_core::train::{self, AdaptationSetup, EpochRecord, TrainOutcome};
use traverse_core::types::{clamp_scores, SectionLayout, TraversabilityVector};

use crate::error::{CliError, CliResult};
use crate::settings::*;

pub const RUN_MANIFEST: &str = "run_manifest.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCH_LOG: &str = "epoch_log.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";

fn out_dir(out: &Option<PathBuf>) -> CliResult<&Path> {
    let dir = require(out, "out")?;
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn select_frames(s: &SelectFramesSettings) -> CliResult<()> {
    let manifest = Manifest::read(require(&s.manifest, "manifest")?)?;
    let out = require(&s.out, "out")?;
    let cfg = SelectionConfig {
        theta_th: s.theta_th,
        dist_th: s.dist_th,
        comb_threshold: s.comb,
    };
    let mut selected = dataset::select_frames(&manifest.records, &cfg)?;
    // Relative image paths only stay valid when the new manifest sits next to the old one.
    if out.parent() != Some(manifest.base_dir.as_path()) {
        for r in &mut selected {
            r.image_path = manifest.resolve(r).to_string_lossy().into_owned();
        }
    }
    write_manifest(out, &selected)?;
    let mut run_path = out.as_os_str().to_owned();
    run_path.push(".run.toml");
    write_run_manifest(Path::new(&run_path), s)?;
    info!("kept {} of {} frames", selected.len(), manifest.records.len());
    println!("{}", selected.len());
    Ok(())
}

pub fn synth_gen(s: &SynthGenSettings) -> CliResult<()> {
    let out = out_dir(&s.out)?;
    let style = GroundStyle::parse(&s.style)?;
    let scene = SceneConfig {
        height: s.height,
        width: s.width,
        min_obstacles: s.min_obstacles,
        max_obstacles: s.max_obstacles,
        noise_level: s.noise,
    };
    if s.height == 0 || s.width == 0 || s.min_obstacles > s.max_obstacles {
        return Err(CliError::Config(format!("invalid scene settings {scene:?}")));
    }
    let samples = synth::generate_domain_set(s.n, style, s.seed, &scene, s.k)?;
    synth::export_dataset(out, &samples, s.k, &s.prefix)?;
    write_run_manifest(&out.join(RUN_MANIFEST), s)?;
    info!("wrote {} {} scenes to {}", s.n, style.name(), out.display());
    Ok(())
}

/// Manifest records that have an annotation document, with their scores.
fn annotated(manifest: &Manifest, annotations: &Path) -> CliResult<Vec<(FrameRecord, TraversabilityVector)>> {
    let mut out = Vec::new();
    for rec in &manifest.records {
        let path = annotation_path(annotations, &rec.image_path);
        if path.exists() {
            out.push((rec.clone(), read_annotation(&path)?.scores()?));
        } else {
            log::warn!("no annotation for {}, skipping", rec.image_path);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!(
            "no annotated frames under {}",
            annotations.display()
        )));
    }
    Ok(out)
}

fn load_resized(manifest: &Manifest, rec: &FrameRecord, short_side: Option<usize>) -> CliResult<traverse_core::ImageFrame> {
    let frame = load_frame(&manifest.resolve(rec))?;
    Ok(match short_side {
        Some(side) => resize_shortest_side(frame, side),
        None => frame,
    })
}

fn to_samples(
    manifest: &Manifest,
    items: &[(FrameRecord, TraversabilityVector)],
    short_side: Option<usize>,
) -> CliResult<Vec<Sample>> {
    items
        .iter()
        .map(|(rec, scores)| {
            Ok(Sample {
                frame: load_resized(manifest, rec, short_side)?,
                scores: Some(scores.clone()),
                domain: rec.domain.clone(),
            })
        })
        .collect()
}

fn absolute_records(manifest: &Manifest, items: &[(FrameRecord, TraversabilityVector)]) -> Vec<FrameRecord> {
    items
        .iter()
        .map(|(r, _)| FrameRecord {
            image_path: manifest.resolve(r).to_string_lossy().into_owned(),
            ..r.clone()
        })
        .collect()
}

/// Runs training with the epoch log streamed to `out`, then saves the selected checkpoint.
fn run_training(
    out: &Path,
    short_side: usize,
    f: impl FnOnce(&mut dyn FnMut(&EpochRecord) -> traverse_core::Result<()>) -> traverse_core::Result<TrainOutcome>,
) -> CliResult<TrainOutcome> {
    let log_path = out.join(EPOCH_LOG);
    if log_path.exists() {
        fs::remove_file(&log_path)?;
    }
    let mut hook = |rec: &EpochRecord| {
        info!("epoch {} train_mae {:.4} loss {:.4}", rec.epoch, rec.train_mae, rec.train_loss);
        train::append_epoch_record(&log_path, rec)
    };
    let mut outcome = f(&mut hook)?;
    if let serde_json::Value::Object(map) = &mut outcome.checkpoint.metadata {
        map.insert("short_side".into(), short_side.into());
    }
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    info!(
        "saved epoch {} checkpoint to {}",
        outcome.checkpoint.epoch,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(outcome)
}

pub fn train(s: &TrainSettings) -> CliResult<()> {
    let out = out_dir(&s.out)?;
    let cfg = s.train_config();
    cfg.validate()?;
    let manifest = Manifest::read(require(&s.manifest, "manifest")?)?;
    let items = annotated(&manifest, require(&s.annotations, "annotations")?)?;
    let (train_items, test_items) = if s.test_fraction == 0.0 {
        (items, Vec::new())
    } else {
        dataset::split_train_test(&items, 1.0 - s.test_fraction, s.seed)?
    };
    write_manifest(&out.join("train_manifest.jsonl"), &absolute_records(&manifest, &train_items))?;
    write_manifest(&out.join("test_manifest.jsonl"), &absolute_records(&manifest, &test_items))?;
    let samples = to_samples(&manifest, &train_items, s.short_side())?;
    write_run_manifest(&out.join(RUN_MANIFEST), s)?;
    info!("training on {} frames, {} held out", samples.len(), test_items.len());
    run_training(out, s.short_side, |hook| train::train_supervised(&samples, &cfg, Some(hook)))?;
    Ok(())
}

pub fn adapt(s: &AdaptSettings) -> CliResult<()> {
    let out = out_dir(&s.out)?;
    let cfg = s.adapt_config();
    cfg.validate()?;
    let source_manifest = Manifest::read(require(&s.source, "source")?)?;
    let items = annotated(&source_manifest, require(&s.source_annotations, "source_annotations")?)?;
    let target_manifest = Manifest::read(require(&s.target, "target")?)?;
    let source = to_samples(&source_manifest, &items, s.short_side())?;
    let target = target_manifest
        .records
        .iter()
        .map(|r| load_resized(&target_manifest, r, s.short_side()))
        .collect::<CliResult<Vec<_>>>()?;
    write_run_manifest(&out.join(RUN_MANIFEST), s)?;
    info!("adapting with {} source and {} target frames", source.len(), target.len());
    let setup = AdaptationSetup {
        source,
        target,
        holdout: None,
    };
    run_training(out, s.short_side, |hook| train::train_adaptation(&setup, &cfg, Some(hook)))?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::Runtime(format!("cannot load checkpoint {}: {e}", path.display())))
}

/// Explicit override, else the resize recorded at training time, else none.
fn checkpoint_short_side(ck: &Checkpoint, explicit: Option<usize>) -> Option<usize> {
    explicit
        .or_else(|| ck.metadata.get("short_side").and_then(|v| v.as_u64()).map(|v| v as usize))
        .filter(|&v| v > 0)
}

fn overlay_name(image_path: &Path) -> String {
    let stem = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{stem}_overlay.png")
}

pub fn eval(s: &EvalSettings) -> CliResult<()> {
    let out = out_dir(&s.out)?;
    let ck = load_checkpoint(require(&s.checkpoint, "checkpoint")?)?;
    let short_side = checkpoint_short_side(&ck, s.short_side);
    let manifest = Manifest::read(require(&s.manifest, "manifest")?)?;
    let items = annotated(&manifest, require(&s.annotations, "annotations")?)?;
    let frames = items
        .iter()
        .map(|(r, _)| load_resized(&manifest, r, short_side))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<_> = frames.iter().collect();
    let preds = train::predict(&ck.model, &refs, s.batch.max(1))?;
    let gt: Vec<TraversabilityVector> = items.iter().map(|(_, t)| t.clone()).collect();
    let domains: Vec<_> = items.iter().map(|(r, _)| r.domain.clone()).collect();
    let report = eval::compute_report(
        &preds,
        &gt,
        &domains,
        EvalConfig {
            unsafe_tolerance: s.tolerance,
        },
    )?;
    write_atomic(&out.join(REPORT_FILE), report.to_json_pretty()?.as_bytes())?;
    if let Some(dir) = &s.overlays {
        fs::create_dir_all(dir)?;
        for ((frame, pred), (rec, truth)) in frames.iter().zip(&preds).zip(&items) {
            let layout = SectionLayout::new(frame.width(), truth.k())?;
            let img = eval::render_overlay(frame, truth, &clamp_scores(pred), &layout)?;
            dataset::save_frame(&img, &dir.join(overlay_name(Path::new(&rec.image_path))))?;
        }
    }
    write_run_manifest(&out.join(RUN_MANIFEST), s)?;
    println!(
        "mae_all {:.4} unsafe_rate {:.4} frames {}",
        report.mae_all, report.unsafe_rate, report.n_frames
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Prediction<'a> {
    image: &'a Path,
    scores: Vec<f64>,
}

pub fn infer(s: &InferSettings) -> CliResult<()> {
    if s.images.is_empty() {
        return Err(CliError::Config("no images given".into()));
    }
    let ck = load_checkpoint(require(&s.checkpoint, "checkpoint")?)?;
    let short_side = checkpoint_short_side(&ck, s.short_side);
    let mut frames = Vec::with_capacity(s.images.len());
    for path in &s.images {
        let frame = load_frame(path)?;
        frames.push(match short_side {
            Some(side) => resize_shortest_side(frame, side),
            None => frame,
        });
    }
    let refs: Vec<_> = frames.iter().collect();
    let raw = train::predict(&ck.model, &refs, s.batch.max(1))?;
    let rows: Vec<Prediction> = s
        .images
        .iter()
        .zip(&raw)
        .map(|(image, r)| Prediction {
            image,
            scores: clamp_scores(r).into_inner(),
        })
        .collect();
    for row in &rows {
        println!("{}", serde_json::to_string(row)?);
    }
    if let Some(out) = &s.out {
        fs::create_dir_all(out)?;
        write_jsonl(&out.join(PREDICTIONS_FILE), &rows)?;
        if s.overlay {
            for (frame, row) in frames.iter().zip(&rows) {
                let k = row.scores.len();
                let layout = SectionLayout::new(frame.width(), k)?;
                let pred = TraversabilityVector::new(row.scores.clone())?;
                let open = TraversabilityVector::filled(k, 1.0)?;
                let img = eval::render_overlay(frame, &open, &pred, &layout)?;
                dataset::save_frame(&img, &out.join(overlay_name(row.image)))?;
            }
        }
        write_run_manifest(&out.join(RUN_MANIFEST), s)?;
    } else if s.overlay {
        return Err(CliError::Config("--overlay needs --out".into()));
    }
    Ok(())
}

/// Built-in worlds for a robot starting at the origin facing +x.
pub fn scenario_world(name: &str) -> CliResult<World> {
    let obstacles = match name {
        "open" => vec![],
        // A wall straight ahead, long enough to turn along.
        "wall" => vec![Rect {
            x0: 3.0,
            y0: -20.0,
            x1: 3.5,
            y1: 20.0,
        }],
        // Walls ahead and on both sides: the only safe outcome is stopping.
        "dead_end" => vec![
            Rect {
                x0: 3.0,
                y0: -3.0,
                x1: 3.5,
                y1: 3.0,
            },
            Rect {
                x0: -1.0,
                y0: 1.0,
                x1: 3.5,
                y1: 1.5,
            },
            Rect {
                x0: -1.0,
                y0: -1.5,
                x1: 3.5,
                y1: -1.0,
            },
        ],
        // Blocked ahead and on the left, free to the right.
        "corridor" => vec![
            Rect {
                x0: 3.0,
                y0: -1.0,
                x1: 3.5,
                y1: 8.0,
            },
            Rect {
                x0: -1.0,
                y0: 1.5,
                x1: 3.5,
                y1: 2.0,
            },
        ],
        other => return Err(CliError::Config(format!("unknown scenario {other:?}"))),
    };
    Ok(World::new(obstacles))
}

pub fn navigate_sim(s: &NavigateSimSettings) -> CliResult<()> {
    let out = out_dir(&s.out)?;
    let world = match &s.world {
        Some(path) => serde_json::from_slice::<World>(&fs::read(path)?)
            .map_err(|e| CliError::Config(format!("bad world file {}: {e}", path.display())))?,
        None => scenario_world(&s.scenario)?,
    };
    let nav = NavConfig {
        v_max: s.v_max,
        full_speed_score: s.full_speed_score,
        stop_score: s.stop_score,
        fov: s.fov,
        k: s.k,
        angular_gain: s.angular_gain,
    };
    nav.validate()?;
    let sim = SimConfig {
        dt: s.dt,
        steps: s.steps,
        stop_on_halt: true,
        image_height: s.image_height,
        image_width: s.image_width,
        ground_style: GroundStyle::parse(&s.style)?,
        seed: s.seed,
    };
    let start = Pose2 {
        x: s.start_x,
        y: s.start_y,
        yaw: s.start_yaw,
    };
    let ck = s.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut rays = OraclePolicy;
    let mut camera = CameraOraclePolicy;
    let mut learned = ck.as_ref().map(|ck| nav::ModelPolicy { model: &ck.model });
    let policy: &mut dyn Policy = match (learned.as_mut(), s.perception.as_str()) {
        (Some(p), _) => p,
        (None, "camera") => &mut camera,
        (None, "rays") => &mut rays,
        (None, other) => return Err(CliError::Config(format!("unknown perception {other:?}"))),
    };
    let trajectory = nav::simulate(policy, &world, start, &nav, &sim)?;
    write_jsonl(&out.join(TRAJECTORY_FILE), &trajectory)?;
    if s.render {
        let img = nav::render_path(&world, &trajectory, s.px_per_m);
        img.save(out.join("path.png"))?;
    }
    write_run_manifest(&out.join(RUN_MANIFEST), s)?;
    let last = trajectory.last().ok_or_else(|| CliError::Runtime("empty trajectory".into()))?;
    let collided = trajectory.iter().any(|p| world.collides(p.x, p.y));
    println!(
        "steps {} final ({:.3}, {:.3}, {:.1} deg) linear {:.3} collided {}",
        trajectory.len(),
        last.x,
        last.y,
        last.yaw,
        last.linear,
        collided
    );
    Ok(())
}
