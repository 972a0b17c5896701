//! Pipeline stages. Every stage reads its inputs from files, writes its
//! outputs atomically (write-then-rename), and is deterministic given the
//! configured seeds, so reruns on unchanged inputs are byte-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use drivevla::captioning::{self, FrameContext, HttpVlmClient, RuleCaption, VlmClient};
use drivevla::captioning::mock::{MockMode, MockScript, MockVlmServer};
use drivevla::dataset::{
    assemble_record, compute_stats, overlay_geometry, read_jsonl, FrameRecord,
    SceneManifest,
};
use drivevla::error::{Error, Result};
use drivevla::estimation::estimate_path;
use drivevla::eval::{
    baseline_rollout, evaluate, split_and_subsample, word_attribution, EvalFrame, TrajectoryPair,
    DEFAULT_STOPWORDS,
};
use drivevla::geodesy::{CameraModel, Pose};
use drivevla::ingest::{align_to_frames, parse_log, AlignedFrame};
use drivevla::sampler::{
    assign_weights, distribution_report, enumerate_candidates, sample_scenes, SceneCandidate,
};
use drivevla::synth::{gen_corpus, CorpusSpec};
use drivevla::trajectory::{annotate_future, EgoTrajectory, SUBSAMPLE_INDICES};
use drivevla::trajfilter::{filter_recording, TrajectoryVerdict, VerdictReason};
use drivevla::SCENE_FRAMES;

use crate::config::PipelineConfig;

pub struct Logger {
    pub json: bool,
}

impl Logger {
    pub fn event(&self, stage: &str, message: &str, extra: serde_json::Value) {
        let line = if self.json {
            let mut obj = serde_json::json!({ "stage": stage, "message": message });
            if let (Some(o), Some(e)) = (obj.as_object_mut(), extra.as_object()) {
                for (k, v) in e {
                    o.insert(k.clone(), v.clone());
                }
            }
            obj.to_string()
        } else if let Some(extra) = extra.as_object().filter(|e| !e.is_empty()) {
            let kv: Vec<String> = extra.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("[{stage}] {message} ({})", kv.join(", "))
        } else {
            format!("[{stage}] {message}")
        };
        // Logging must never take the pipeline down, even if stderr is a
        // closed pipe.
        let _ = writeln!(std::io::stderr(), "{line}");
    }
}

// ---------------------------------------------------------------- helpers

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

/// Write `bytes` to `path` through a sibling temp file and a rename, so
/// concurrent readers never observe a partial file.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("cannot write to {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn atomic_write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        line: 0,
        source: e,
    })?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn atomic_write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: 0,
            source: e,
        })?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source: e,
        })?);
    }
    Ok(out)
}

/// Recording subdirectories (those holding a `can.jsonl`), sorted by name.
fn list_recordings(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("recordings directory {} does not exist", dir.display())));
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("can.jsonl").is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Config(format!("no recordings under {}", dir.display())));
    }
    Ok(out)
}

fn poses_path(cfg: &PipelineConfig, recording: &str) -> PathBuf {
    cfg.paths.output.join("paths").join(format!("{recording}.jsonl"))
}

fn verdicts_path(cfg: &PipelineConfig, recording: &str) -> PathBuf {
    cfg.paths.output.join("verdicts").join(format!("{recording}.jsonl"))
}

fn manifest_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.output.join("scenes.manifest.jsonl")
}

fn captions_path(cfg: &PipelineConfig, scene_id: &str) -> PathBuf {
    cfg.paths.output.join("captions").join(format!("{scene_id}.jsonl"))
}

fn records_path(cfg: &PipelineConfig, scene_id: &str) -> PathBuf {
    cfg.paths.output.join("records").join(format!("{scene_id}.jsonl"))
}

// ----------------------------------------------------------------- ingest

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestEntry {
    pub recording: String,
    pub frames: usize,
    pub can_samples: usize,
    pub gnss_fixes: usize,
    pub imu_samples: usize,
    pub frames_with_can: usize,
    pub frames_with_gnss: usize,
}

pub fn ingest(cfg: &PipelineConfig, log: &Logger) -> Result<()> {
    let recordings = list_recordings(&cfg.paths.recordings)?;
    let mut entries = recordings
        .par_iter()
        .map(|(name, path)| {
            let raw = parse_log(path)?;
            let aligned = align_to_frames(&raw);
            Ok(IngestEntry {
                recording: name.clone(),
                frames: raw.frames.len(),
                can_samples: raw.can.len(),
                gnss_fixes: raw.gnss.len(),
                imu_samples: raw.imu.len(),
                frames_with_can: aligned.iter().filter(|f| f.can.is_some()).count(),
                frames_with_gnss: aligned.iter().filter(|f| f.gnss_available).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.recording.cmp(&b.recording));
    let path = cfg.paths.output.join("ingest_report.json");
    atomic_write_json(&path, &entries)?;
    log.event(
        "ingest",
        "validated recordings",
        serde_json::json!({ "recordings": entries.len(), "report": path }),
    );
    Ok(())
}

// --------------------------------------------------------------- estimate

pub fn estimate(cfg: &PipelineConfig, log: &Logger) -> Result<()> {
    let recordings = list_recordings(&cfg.paths.recordings)?;
    recordings.par_iter().try_for_each(|(name, path)| {
        let raw = parse_log(path)?;
        let poses = estimate_path(&raw, &cfg.noise)?;
        atomic_write_jsonl(&poses_path(cfg, name), &poses)
    })?;
    log.event("estimate", "wrote per-frame poses", serde_json::json!({ "recordings": recordings.len() }));
    Ok(())
}

// ----------------------------------------------------------------- filter

#[derive(Debug, Serialize, Deserialize)]
pub struct FilterEntry {
    pub recording: String,
    pub frames: usize,
    pub invalid: usize,
    pub jumps: usize,
    pub vibrations: usize,
}

pub fn filter(cfg: &PipelineConfig, log: &Logger) -> Result<()> {
    let recordings = list_recordings(&cfg.paths.recordings)?;
    let mut entries = recordings
        .par_iter()
        .map(|(name, _)| {
            let poses: Vec<Pose> = read_lines(&poses_path(cfg, name))?;
            let trajs = annotate_future(&poses);
            let verdicts = filter_recording(&trajs, &cfg.filter);
            atomic_write_jsonl(&verdicts_path(cfg, name), &verdicts)?;
            Ok(FilterEntry {
                recording: name.clone(),
                frames: verdicts.len(),
                invalid: verdicts.iter().filter(|v| !v.valid).count(),
                jumps: verdicts.iter().filter(|v| v.reason == VerdictReason::Jump).count(),
                vibrations: verdicts.iter().filter(|v| v.reason == VerdictReason::Vibration).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.recording.cmp(&b.recording));
    let invalid: usize = entries.iter().map(|e| e.invalid).sum();
    atomic_write_json(&cfg.paths.output.join("filter_report.json"), &entries)?;
    log.event(
        "filter",
        "wrote trajectory verdicts",
        serde_json::json!({ "recordings": entries.len(), "invalid_frames": invalid }),
    );
    Ok(())
}

// ----------------------------------------------------------------- sample

pub fn sample(cfg: &PipelineConfig, log: &Logger) -> Result<()> {
    let recordings = list_recordings(&cfg.paths.recordings)?;
    let per_recording = recordings
        .par_iter()
        .map(|(name, path)| {
            let raw = parse_log(path)?;
            let aligned = align_to_frames(&raw);
            let mut candidates = enumerate_candidates(name, &aligned);
            let verdicts: Vec<TrajectoryVerdict> = read_lines(&verdicts_path(cfg, name))?;
            for c in &mut candidates {
                // A scene with any rejected trajectory never enters the pool.
                let span = &verdicts[c.start_frame..(c.start_frame + c.frame_count).min(verdicts.len())];
                c.eligible &= span.iter().all(|v| v.valid);
            }
            Ok(candidates)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pool: Vec<SceneCandidate> = per_recording.into_iter().flatten().collect();
    assign_weights(&mut pool, &cfg.sampling.bins, cfg.sampling.delta);
    let selected = sample_scenes(&pool, cfg.sampling.n_scenes, cfg.sampling.seed)?;

    let manifests: Vec<SceneManifest> = selected
        .iter()
        .map(|c| {
            let verdicts: Vec<TrajectoryVerdict> =
                read_lines::<TrajectoryVerdict>(&verdicts_path(cfg, &c.recording_id))?
                    [c.start_frame..c.start_frame + c.frame_count]
                    .to_vec();
            Ok(SceneManifest {
                scene_id: c.scene_id(),
                candidate: c.clone(),
                verdicts,
                windows: captioning::make_windows(c.frame_count)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    atomic_write_jsonl(&manifest_path(cfg), &manifests)?;

    let eligible: Vec<SceneCandidate> = pool.iter().filter(|c| c.eligible).cloned().collect();
    let report = distribution_report(&eligible, &selected, &cfg.sampling.bins);
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["metric", "bin", "before", "after"]).map_err(csv_err)?;
    for (i, (b, a)) in report.speed_hist_before.iter().zip(&report.speed_hist_after).enumerate() {
        csv.write_record(["speed_kmh", &format!("{}", i * 10), &b.to_string(), &a.to_string()])
            .map_err(csv_err)?;
    }
    for (i, (b, a)) in report.steering_hist_before.iter().zip(&report.steering_hist_after).enumerate()
    {
        csv.write_record(["steering_bin", &i.to_string(), &b.to_string(), &a.to_string()])
            .map_err(csv_err)?;
    }
    for (name, b, a) in [
        ("speed_entropy_bits", report.speed_entropy_before, report.speed_entropy_after),
        ("steering_entropy_bits", report.steering_entropy_before, report.steering_entropy_after),
    ] {
        csv.write_record([name, "", &b.to_string(), &a.to_string()]).map_err(csv_err)?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    atomic_write(&cfg.paths.output.join("distribution_report.csv"), &bytes)?;

    log.event(
        "sample",
        "selected scenes",
        serde_json::json!({
            "candidates": pool.len(),
            "eligible": eligible.len(),
            "selected": selected.len(),
            "steering_entropy_before": report.steering_entropy_before,
            "steering_entropy_after": report.steering_entropy_after,
        }),
    );
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

// ---------------------------------------------------------------- caption

#[derive(Debug, Clone)]
pub enum CaptionMode {
    RulesOnly,
    Mock,
    Endpoint(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaptionLine {
    pub frame_in_scene: usize,
    pub frame_id: u64,
    pub caption: String,
}

/// Everything one scene needs in memory: aligned frames, fused poses, and
/// per-frame future trajectories, sliced to the scene span.
struct SceneData {
    manifest: SceneManifest,
    frames: Vec<AlignedFrame>,
    trajs: Vec<EgoTrajectory>,
    poses: Vec<Pose>,
}

/// Load every selected scene, grouped so each recording is parsed once.
fn load_scenes(cfg: &PipelineConfig) -> Result<Vec<SceneData>> {
    let manifests: Vec<SceneManifest> = read_lines(&manifest_path(cfg))?;
    let mut by_recording: BTreeMap<String, Vec<SceneManifest>> = BTreeMap::new();
    for m in manifests {
        by_recording.entry(m.candidate.recording_id.clone()).or_default().push(m);
    }
    let groups = by_recording
        .into_par_iter()
        .map(|(recording, manifests)| {
            let dir = cfg.paths.recordings.join(&recording);
            let raw = parse_log(&dir)?;
            let aligned = align_to_frames(&raw);
            let poses: Vec<Pose> = read_lines(&poses_path(cfg, &recording))?;
            if poses.len() != aligned.len() {
                return Err(Error::FrameMismatch(format!(
                    "recording {recording}: {} poses for {} frames; rerun the estimate stage",
                    poses.len(),
                    aligned.len()
                )));
            }
            let trajs = annotate_future(&poses);
            manifests
                .into_iter()
                .map(|m| {
                    let start = m.candidate.start_frame;
                    let end = start + m.candidate.frame_count;
                    if end > aligned.len() {
                        return Err(Error::FrameMismatch(format!(
                            "scene {} spans past recording end",
                            m.scene_id
                        )));
                    }
                    Ok(SceneData {
                        manifest: m,
                        frames: aligned[start..end].to_vec(),
                        trajs: trajs[start..end].to_vec(),
                        poses: poses[start..end].to_vec(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scenes: Vec<SceneData> = groups.into_iter().flatten().collect();
    scenes.sort_by(|a, b| a.manifest.scene_id.cmp(&b.manifest.scene_id));
    Ok(scenes)
}

fn frame_context(frame: &AlignedFrame, traj: &EgoTrajectory) -> Result<FrameContext> {
    let can = frame.can.as_ref().ok_or_else(|| {
        Error::FrameMismatch(format!("frame {} has no CAN snapshot", frame.frame.frame_id))
    })?;
    let curvature = if traj.complete { captioning::curvature(traj)? } else { 0.0 };
    let blinker = if can.left_blinker {
        captioning::Blinker::Left
    } else if can.right_blinker {
        captioning::Blinker::Right
    } else {
        captioning::Blinker::None
    };
    Ok(FrameContext {
        speed: can.v_ego,
        accel: can.a_ego,
        curvature,
        lead: frame.lead.clone(),
        traffic_light: frame.lights.first().map(|l| l.state),
        blinker,
    })
}

fn scene_rules(cfg: &PipelineConfig, scene: &SceneData) -> Result<Vec<RuleCaption>> {
    scene
        .frames
        .iter()
        .zip(&scene.trajs)
        .map(|(frame, traj)| {
            Ok(captioning::rule_caption(&frame_context(frame, traj)?, &cfg.captioning.thresholds))
        })
        .collect()
}

fn caption_scene_with_vlm(
    scene: &SceneData,
    rules: &[RuleCaption],
    client: &dyn VlmClient,
) -> Result<Vec<String>> {
    let queries = captioning::AttributeQueries::default();
    let mut captions = vec![String::new(); rules.len()];
    for window in &scene.manifest.windows {
        let rep_rules: Vec<RuleCaption> =
            window.representatives.iter().map(|&r| rules[r].clone()).collect();
        let digest = captioning::rule_digest(&rep_rules);
        let images: Vec<String> = window
            .representatives
            .iter()
            .map(|&r| scene.frames[r].frame.image_path.clone())
            .collect();
        let attrs = captioning::extract_attributes(&images, &queries, client)?;
        let vlm = captioning::augment_caption(window, &images, &digest, attrs, client)?;
        for i in window.start_frame..window.start_frame + window.frame_count {
            captions[i] = captioning::compose_frame_caption(i, &rules[i], &vlm)?;
        }
    }
    Ok(captions)
}

pub fn caption(cfg: &PipelineConfig, mode: &CaptionMode, log: &Logger) -> Result<()> {
    let scenes = load_scenes(cfg)?;

    // The mock server lives for the duration of the stage.
    let (endpoint, _mock) = match mode {
        CaptionMode::RulesOnly => (None, None),
        CaptionMode::Mock => {
            let server = MockVlmServer::start(MockMode::Scripted(MockScript::plausible()))
                .map_err(|e| Error::Config(format!("cannot start mock server: {e}")))?;
            (Some(server.endpoint()), Some(server))
        }
        CaptionMode::Endpoint(url) => (Some(url.clone()), None),
    };
    let client = endpoint.as_deref().map(HttpVlmClient::new);

    scenes.par_iter().try_for_each(|scene| {
        let rules = scene_rules(cfg, scene)?;
        let captions = match &client {
            None => rules.iter().map(|r| r.text.clone()).collect(),
            Some(client) => caption_scene_with_vlm(scene, &rules, client)?,
        };
        let lines: Vec<CaptionLine> = captions
            .into_iter()
            .enumerate()
            .map(|(i, caption)| CaptionLine {
                frame_in_scene: i,
                frame_id: scene.frames[i].frame.frame_id,
                caption,
            })
            .collect();
        atomic_write_jsonl(&captions_path(cfg, &scene.manifest.scene_id), &lines)
    })?;

    log.event(
        "caption",
        "wrote captions",
        serde_json::json!({
            "scenes": scenes.len(),
            "mode": match mode {
                CaptionMode::RulesOnly => "rules-only",
                CaptionMode::Mock => "mock",
                CaptionMode::Endpoint(_) => "vlm",
            },
        }),
    );
    Ok(())
}

// ------------------------------------------------------------------- emit

pub fn emit(cfg: &PipelineConfig, log: &Logger) -> Result<()> {
    let scenes = load_scenes(cfg)?;
    let camera = CameraModel::default_front();

    let per_scene: Vec<Vec<FrameRecord>> = scenes
        .par_iter()
        .enumerate()
        .map(|(scene_index, scene)| {
            let captions: Vec<CaptionLine> =
                read_lines(&captions_path(cfg, &scene.manifest.scene_id))?;
            if captions.len() != scene.frames.len() {
                return Err(Error::FrameMismatch(format!(
                    "scene {}: {} captions for {} frames; rerun the caption stage",
                    scene.manifest.scene_id,
                    captions.len(),
                    scene.frames.len()
                )));
            }
            let mut records = Vec::with_capacity(scene.frames.len());
            for (i, frame) in scene.frames.iter().enumerate() {
                let mut record = assemble_record(
                    frame,
                    &scene.poses[i],
                    &scene.trajs[i],
                    &captions[i].caption,
                    Some(&camera),
                )?;
                // Frame ids are per-recording on disk; records get ids that
                // are unique across the whole dataset so evaluation
                // predictions can refer to frames unambiguously.
                record.frame_id = (scene_index * SCENE_FRAMES + i) as u64;
                records.push(record);
            }
            // Same line format as `emit_jsonl`, but through the atomic
            // temp-file path so a crash never leaves a partial scene.
            atomic_write_jsonl(&records_path(cfg, &scene.manifest.scene_id), &records)?;
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;

    let all: Vec<FrameRecord> = per_scene.into_iter().flatten().collect();
    let stats = compute_stats(&all, scenes.len());
    atomic_write_json(&cfg.paths.output.join("stats.json"), &stats)?;
    log.event(
        "emit",
        "wrote dataset records",
        serde_json::json!({ "scenes": scenes.len(), "frames": all.len(), "hours": stats.hours }),
    );
    Ok(())
}

/// Records of every emitted scene, in manifest (= scene id) order.
fn read_dataset(cfg: &PipelineConfig) -> Result<Vec<(String, Vec<FrameRecord>)>> {
    let manifests: Vec<SceneManifest> = read_lines(&manifest_path(cfg))?;
    manifests
        .par_iter()
        .map(|m| Ok((m.scene_id.clone(), read_jsonl(&records_path(cfg, &m.scene_id))?)))
        .collect()
}

pub fn stats(cfg: &PipelineConfig, log: &Logger) -> Result<()> {
    let dataset = read_dataset(cfg)?;
    let all: Vec<FrameRecord> = dataset.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let stats = compute_stats(&all, dataset.len());
    atomic_write_json(&cfg.paths.output.join("stats.json"), &stats)?;
    log.event(
        "stats",
        "recomputed dataset stats",
        serde_json::json!({ "scenes": dataset.len(), "frames": all.len(), "hours": stats.hours }),
    );
    Ok(())
}

// ----------------------------------------------------------------- render

/// Overlay sampling rate: one annotated frame per second of footage.
const RENDER_STRIDE: usize = 20;

pub fn render(cfg: &PipelineConfig, log: &Logger) -> Result<()> {
    let dataset = read_dataset(cfg)?;
    dataset.par_iter().try_for_each(|(scene_id, records)| {
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["frame_id", "u", "v"]).map_err(csv_err)?;
        for record in records.iter().step_by(RENDER_STRIDE) {
            for (u, v) in overlay_geometry(record)? {
                csv.write_record([record.frame_id.to_string(), u.to_string(), v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        let bytes = csv.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        atomic_write(&cfg.paths.output.join("overlays").join(format!("{scene_id}.csv")), &bytes)
    })?;
    log.event("render", "wrote overlay geometry", serde_json::json!({ "scenes": dataset.len() }));
    Ok(())
}

// ------------------------------------------------------------------- eval

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionLine {
    pub frame_id: u64,
    pub points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade: f64,
    pub fde: f64,
    pub count: usize,
    /// Per-pair metrics are averaged over pairs.
    pub averaging: String,
    pub mode: String,
    pub split: SplitSizes,
}

fn predicted_for(frame: &EvalFrame, predictions: Option<&BTreeMap<u64, PredictionLine>>) -> Result<(Vec<[f64; 3]>, String)> {
    match predictions {
        None => Ok((baseline_rollout(frame.v_ego, frame.steering_angle_deg), String::new())),
        Some(map) => {
            let line = map.get(&frame.frame_id).ok_or_else(|| {
                Error::FrameMismatch(format!("no prediction for frame {}", frame.frame_id))
            })?;
            if line.points.len() != SUBSAMPLE_INDICES.len() {
                return Err(Error::WrongLength {
                    expected: SUBSAMPLE_INDICES.len(),
                    got: line.points.len(),
                });
            }
            Ok((line.points.clone(), line.caption.clone().unwrap_or_default()))
        }
    }
}

pub fn eval(cfg: &PipelineConfig, predictions: Option<&Path>, log: &Logger) -> Result<()> {
    let dataset = read_dataset(cfg)?;
    let split = split_and_subsample(&dataset, &cfg.split)?;

    let prediction_map: Option<BTreeMap<u64, PredictionLine>> = match predictions {
        Some(path) => {
            let lines: Vec<PredictionLine> = read_lines(path)?;
            Some(lines.into_iter().map(|l| (l.frame_id, l)).collect())
        }
        None => None,
    };

    if prediction_map.is_none() {
        // Baseline mode also records what it predicted.
        let lines: Vec<PredictionLine> = split
            .test
            .iter()
            .map(|f| PredictionLine {
                frame_id: f.frame_id,
                points: baseline_rollout(f.v_ego, f.steering_angle_deg),
                caption: None,
            })
            .collect();
        atomic_write_jsonl(&cfg.paths.output.join("predictions_baseline.jsonl"), &lines)?;
    }

    let pairs: Vec<TrajectoryPair> = split
        .test
        .iter()
        .map(|frame| {
            let (predicted, predicted_caption) = predicted_for(frame, prediction_map.as_ref())?;
            Ok(TrajectoryPair {
                predicted,
                ground_truth: frame.points.clone(),
                gt_caption: frame.caption.clone(),
                predicted_caption,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = evaluate(&pairs)?;
    let (by_ade, by_fde) = word_attribution(&pairs, DEFAULT_STOPWORDS, 10)?;

    for (name, rows) in [("attribution_ade.csv", &by_ade), ("attribution_fde.csv", &by_fde)] {
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["word", "mean_ade", "mean_fde", "frequency"]).map_err(csv_err)?;
        for row in rows {
            csv.write_record([
                row.word.clone(),
                row.mean_ade.to_string(),
                row.mean_fde.to_string(),
                row.frequency.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = csv.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        atomic_write(&cfg.paths.output.join(name), &bytes)?;
    }

    let report = EvalReport {
        ade: result.ade,
        fde: result.fde,
        count: result.count,
        averaging: "macro".to_string(),
        mode: if predictions.is_some() { "predictions" } else { "baseline" }.to_string(),
        split: SplitSizes {
            train_scenes: split.scenes.0.len(),
            val_scenes: split.scenes.1.len(),
            test_scenes: split.scenes.2.len(),
            train_frames: split.train.len(),
            val_frames: split.val.len(),
            test_frames: split.test.len(),
        },
    };
    atomic_write_json(&cfg.paths.output.join("eval_report.json"), &report)?;
    log.event(
        "eval",
        "wrote evaluation report",
        serde_json::json!({ "ade": report.ade, "fde": report.fde, "pairs": report.count }),
    );
    Ok(())
}

// ------------------------------------------------------------------ synth

pub fn synth(
    cfg: &PipelineConfig,
    scenes: usize,
    seed: u64,
    out: Option<PathBuf>,
    images: bool,
    log: &Logger,
) -> Result<()> {
    let out = out.unwrap_or_else(|| cfg.paths.recordings.clone());
    let spec = CorpusSpec { scenes, seed, write_images: images, ..CorpusSpec::default() };
    let metas = gen_corpus(&spec, &out)?;
    let frames: usize = metas.iter().map(|m| m.frame_count).sum();
    log.event(
        "synth",
        "generated corpus",
        serde_json::json!({ "recordings": metas.len(), "frames": frames, "dir": out }),
    );
    Ok(())
}

// --------------------------------------------------------------- pipeline

pub fn pipeline(cfg: &PipelineConfig, mode: &CaptionMode, log: &Logger) -> Result<()> {
    ingest(cfg, log)?;
    estimate(cfg, log)?;
    filter(cfg, log)?;
    sample(cfg, log)?;
    caption(cfg, mode, log)?;
    emit(cfg, log)?;
    render(cfg, log)?;
    eval(cfg, None, log)?;
    Ok(())
}
