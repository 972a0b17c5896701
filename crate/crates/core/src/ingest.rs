//! Raw recording ingest: line-delimited JSON streams, one directory per
//! recording, aligned to the 20 Hz camera frame clock.
//!
//! Required streams: `can.jsonl`, `gnss.jsonl`, `imu.jsonl`, `frames.jsonl`.
//! Optional streams: `traffic_lights.jsonl`, `radar.jsonl`, `boxes.jsonl`.
//! Every line is a JSON object with a `timestamp` in epoch milliseconds
//! (except frame-keyed streams, which carry `frame_id`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::CameraModel;

/// Transmission gear. Unknown vendor codes are preserved verbatim instead of
/// failing the parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Gear {
    Park,
    Reverse,
    Neutral,
    Drive,
    Low,
    Other(String),
}

impl From<String> for Gear {
    fn from(s: String) -> Self {
        match s.as_str() {
            "park" => Gear::Park,
            "reverse" => Gear::Reverse,
            "neutral" => Gear::Neutral,
            "drive" => Gear::Drive,
            "low" => Gear::Low,
            _ => Gear::Other(s),
        }
    }
}

impl From<Gear> for String {
    fn from(g: Gear) -> String {
        match g {
            Gear::Park => "park".into(),
            Gear::Reverse => "reverse".into(),
            Gear::Neutral => "neutral".into(),
            Gear::Drive => "drive".into(),
            Gear::Low => "low".into(),
            Gear::Other(s) => s,
        }
    }
}

/// One CAN bus snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanFrame {
    pub timestamp: i64,
    pub v_ego: f64,
    pub v_ego_raw: f64,
    pub a_ego: f64,
    /// Steering angle, degrees, positive left.
    pub steering_angle: f64,
    pub steering_torque: f64,
    pub brake: f64,
    pub brake_pressed: bool,
    pub gas: f64,
    pub gas_pressed: bool,
    pub door_open: bool,
    pub seatbelt_unlatched: bool,
    pub gear: Gear,
    pub left_blinker: bool,
    pub right_blinker: bool,
}

/// One GNSS position fix, already in ECEF meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnssFix {
    pub timestamp: i64,
    pub position_ecef: [f64; 3],
    pub fix_valid: bool,
}

impl GnssFix {
    pub fn ecef(&self) -> Vector3<f64> {
        Vector3::from(self.position_ecef)
    }
}

/// One IMU sample in the device frame (x forward, y left, z up), gravity
/// compensated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: i64,
    pub accel_device: [f64; 3],
    pub gyro_device: [f64; 3],
}

/// Camera frame index entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndex {
    pub frame_id: u64,
    pub timestamp: i64,
    pub image_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrowDirection {
    Left,
    Right,
    Straight,
}

/// Traffic light state as produced by the upstream detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightState {
    Red,
    Yellow,
    Green,
    RedWithArrow(ArrowDirection),
    Unknown,
}

#[derive(Serialize, Deserialize)]
struct TrafficLightWire {
    frame_id: u64,
    state: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    arrow: Option<ArrowDirection>,
    bbox: [f64; 4],
}

/// One traffic-light detection attached to a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TrafficLightWire", into = "TrafficLightWire")]
pub struct TrafficLightObs {
    pub frame_id: u64,
    pub state: LightState,
    /// Pixel rectangle `[x_min, y_min, x_max, y_max]`.
    pub bbox: [f64; 4],
}

impl From<TrafficLightWire> for TrafficLightObs {
    fn from(w: TrafficLightWire) -> Self {
        let state = match (w.state.as_str(), w.arrow) {
            ("red", _) => LightState::Red,
            ("yellow", _) => LightState::Yellow,
            ("green", _) => LightState::Green,
            ("red_with_arrow", Some(dir)) => LightState::RedWithArrow(dir),
            _ => LightState::Unknown,
        };
        TrafficLightObs { frame_id: w.frame_id, state, bbox: w.bbox }
    }
}

impl From<TrafficLightObs> for TrafficLightWire {
    fn from(o: TrafficLightObs) -> Self {
        let (state, arrow) = match o.state {
            LightState::Red => ("red", None),
            LightState::Yellow => ("yellow", None),
            LightState::Green => ("green", None),
            LightState::RedWithArrow(dir) => ("red_with_arrow", Some(dir)),
            LightState::Unknown => ("unknown", None),
        };
        TrafficLightWire { frame_id: o.frame_id, state: state.into(), arrow, bbox: o.bbox }
    }
}

/// One radar target from a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarTarget {
    pub timestamp: i64,
    /// Slant range, meters.
    pub range: f64,
    /// Closing rate, m/s, positive when the target moves away.
    pub range_rate: f64,
    /// Radians from the forward axis, positive left.
    pub azimuth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxClass {
    Car,
    Truck,
    Bus,
    Motorcycle,
    Other,
}

/// One detector bounding box on a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraBox {
    pub frame_id: u64,
    /// Pixel rectangle `[x_min, y_min, x_max, y_max]`.
    pub bbox: [f64; 4],
    pub class: BoxClass,
}

/// All streams of one recording, each sorted by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorLog {
    pub can: Vec<CanFrame>,
    pub gnss: Vec<GnssFix>,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<FrameIndex>,
    pub traffic_lights: Vec<TrafficLightObs>,
    pub radar: Vec<RadarTarget>,
    pub boxes: Vec<CameraBox>,
}

/// The lead vehicle fused from radar and camera boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadVehicleObs {
    pub frame_id: u64,
    /// (longitudinal, lateral) meters in the ego frame.
    pub rel_position: (f64, f64),
    /// Absolute speed, m/s.
    pub speed: f64,
    /// Filled by differencing successive observations at the pipeline
    /// level; a single frame carries no acceleration information.
    pub accel: f64,
}

/// One camera frame with every stream matched to it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    pub frame: FrameIndex,
    /// Nearest CAN snapshot within 100 ms, if any.
    pub can: Option<CanFrame>,
    /// Nearest IMU sample within 100 ms, if any.
    pub imu: Option<ImuSample>,
    /// GNSS position at the frame time: interpolated between bracketing
    /// valid fixes, else the nearest valid fix within 1 s.
    pub gnss_ecef: Option<[f64; 3]>,
    /// False when no valid fix exists within 1 s of the frame.
    pub gnss_available: bool,
    pub lights: Vec<TrafficLightObs>,
    pub lead: Option<LeadVehicleObs>,
}

/// Radar/camera lead-vehicle fusion parameters.
#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Half of the assumed ego lane width; targets farther off-center are
    /// not lane candidates.
    pub lane_half_width_m: f64,
    /// Radar scans farther than this from the frame are not considered.
    pub radar_window_ms: i64,
    pub camera: CameraModel,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lane_half_width_m: 1.8,
            radar_window_ms: 100,
            camera: CameraModel::default_front(),
        }
    }
}

/// CAN/IMU nearest-match window around a frame.
pub const SYNC_WINDOW_MS: i64 = 100;
/// GNSS availability window around a frame.
pub const GNSS_WINDOW_MS: i64 = 1_000;

fn parse_stream<T: DeserializeOwned>(path: &Path, required: bool, recording: &str) -> Result<Vec<T>> {
    if !path.exists() {
        if required {
            return Err(Error::MissingStream {
                recording: recording.to_string(),
                stream: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            });
        }
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source: e,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Parse one recording directory into a [`SensorLog`] with all streams
/// sorted by time. Unknown JSON keys are ignored; a missing required stream
/// file is an error, an empty one is not.
pub fn parse_log(dir: &Path) -> Result<SensorLog> {
    let rec = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut log = SensorLog {
        can: parse_stream(&dir.join("can.jsonl"), true, &rec)?,
        gnss: parse_stream(&dir.join("gnss.jsonl"), true, &rec)?,
        imu: parse_stream(&dir.join("imu.jsonl"), true, &rec)?,
        frames: parse_stream(&dir.join("frames.jsonl"), true, &rec)?,
        traffic_lights: parse_stream(&dir.join("traffic_lights.jsonl"), false, &rec)?,
        radar: parse_stream(&dir.join("radar.jsonl"), false, &rec)?,
        boxes: parse_stream(&dir.join("boxes.jsonl"), false, &rec)?,
    };
    log.can.sort_by_key(|r| r.timestamp);
    log.gnss.sort_by_key(|r| r.timestamp);
    log.imu.sort_by_key(|r| r.timestamp);
    log.frames.sort_by_key(|r| r.timestamp);
    log.traffic_lights.sort_by_key(|r| r.frame_id);
    log.radar.sort_by_key(|r| r.timestamp);
    log.boxes.sort_by_key(|r| r.frame_id);
    Ok(log)
}

fn write_stream<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: 0,
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write a [`SensorLog`] back out as a recording directory. Optional streams
/// are only written when nonempty. Inverse of [`parse_log`] record-for-record.
pub fn write_log(log: &SensorLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_stream(&dir.join("can.jsonl"), &log.can)?;
    write_stream(&dir.join("gnss.jsonl"), &log.gnss)?;
    write_stream(&dir.join("imu.jsonl"), &log.imu)?;
    write_stream(&dir.join("frames.jsonl"), &log.frames)?;
    if !log.traffic_lights.is_empty() {
        write_stream(&dir.join("traffic_lights.jsonl"), &log.traffic_lights)?;
    }
    if !log.radar.is_empty() {
        write_stream(&dir.join("radar.jsonl"), &log.radar)?;
    }
    if !log.boxes.is_empty() {
        write_stream(&dir.join("boxes.jsonl"), &log.boxes)?;
    }
    Ok(())
}

/// Index of the element of `items` nearest in time to `t`, or `None` when
/// the nearest is farther than `window_ms`. `ts` extracts timestamps;
/// `items` must be sorted by them.
fn nearest_within<T>(items: &[T], t: i64, window_ms: i64, ts: impl Fn(&T) -> i64) -> Option<usize> {
    if items.is_empty() {
        return None;
    }
    let at_or_after = items.partition_point(|x| ts(x) < t);
    let mut best: Option<usize> = None;
    for cand in [at_or_after.checked_sub(1), Some(at_or_after)].into_iter().flatten() {
        if cand >= items.len() {
            continue;
        }
        let d = (ts(&items[cand]) - t).abs();
        if d <= window_ms && best.is_none_or(|b| d < (ts(&items[b]) - t).abs()) {
            best = Some(cand);
        }
    }
    best
}

fn gnss_at(fixes: &[GnssFix], t: i64) -> (Option<[f64; 3]>, bool) {
    // Only valid fixes participate.
    let at_or_after = fixes.partition_point(|f| f.timestamp < t);
    let before = fixes[..at_or_after].iter().rev().find(|f| f.fix_valid);
    let after = fixes[at_or_after..].iter().find(|f| f.fix_valid);
    let available = [before, after]
        .iter()
        .flatten()
        .any(|f| (f.timestamp - t).abs() <= GNSS_WINDOW_MS);
    if !available {
        return (None, false);
    }
    let pos = match (before, after) {
        (Some(a), Some(b)) if b.timestamp > a.timestamp => {
            let alpha = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
            let p = a.ecef().lerp(&b.ecef(), alpha);
            Some([p.x, p.y, p.z])
        }
        (Some(a), Some(_)) => Some(a.position_ecef), // both at exactly t
        (Some(one), None) | (None, Some(one)) => {
            if (one.timestamp - t).abs() <= GNSS_WINDOW_MS {
                Some(one.position_ecef)
            } else {
                None
            }
        }
        (None, None) => None,
    };
    (pos, pos.is_some())
}

/// Fuse radar targets and camera boxes into at most one lead vehicle for a
/// frame: a target is associated when its image projection falls inside a
/// box; among associated in-lane targets ahead of the ego, the nearest
/// longitudinal one wins.
pub fn select_lead_vehicle(
    radar: &[RadarTarget],
    boxes: &[CameraBox],
    frame: &AlignedFrame,
    cfg: &FusionConfig,
) -> Option<LeadVehicleObs> {
    let ego_speed = frame.can.as_ref().map_or(0.0, |c| c.v_ego);
    let mut best: Option<(f64, LeadVehicleObs)> = None;
    for target in radar {
        let longitudinal = target.range * target.azimuth.cos();
        let lateral = target.range * target.azimuth.sin();
        if longitudinal <= 0.0 || lateral.abs() > cfg.lane_half_width_m {
            continue;
        }
        let p_ego = Vector3::new(longitudinal, lateral, 0.0);
        let Some((u, v)) = cfg.camera.project(p_ego) else {
            continue;
        };
        let in_box = boxes
            .iter()
            .any(|b| u >= b.bbox[0] && u <= b.bbox[2] && v >= b.bbox[1] && v <= b.bbox[3]);
        if !in_box {
            continue;
        }
        if best.as_ref().is_none_or(|(d, _)| longitudinal < *d) {
            best = Some((
                longitudinal,
                LeadVehicleObs {
                    frame_id: frame.frame.frame_id,
                    rel_position: (longitudinal, lateral),
                    speed: ego_speed + target.range_rate,
                    accel: 0.0,
                },
            ));
        }
    }
    best.map(|(_, obs)| obs)
}

/// Align every stream to the camera clock: one [`AlignedFrame`] per frame
/// index entry. Gaps become `None`s and flags, never errors.
pub fn align_to_frames(log: &SensorLog) -> Vec<AlignedFrame> {
    align_to_frames_with(log, &FusionConfig::default())
}

pub fn align_to_frames_with(log: &SensorLog, cfg: &FusionConfig) -> Vec<AlignedFrame> {
    log.frames
        .iter()
        .map(|frame| {
            let t = frame.timestamp;
            let can = nearest_within(&log.can, t, SYNC_WINDOW_MS, |c| c.timestamp)
                .map(|i| log.can[i].clone());
            let imu = nearest_within(&log.imu, t, SYNC_WINDOW_MS, |s| s.timestamp)
                .map(|i| log.imu[i].clone());
            let (gnss_ecef, gnss_available) = gnss_at(&log.gnss, t);
            let lights: Vec<TrafficLightObs> = log
                .traffic_lights
                .iter()
                .filter(|l| l.frame_id == frame.frame_id)
                .cloned()
                .collect();
            let mut aligned = AlignedFrame {
                frame: frame.clone(),
                can,
                imu,
                gnss_ecef,
                gnss_available,
                lights,
                lead: None,
            };
            // One radar scan: all targets sharing the nearest in-window
            // timestamp.
            let scan: Vec<RadarTarget> =
                match nearest_within(&log.radar, t, cfg.radar_window_ms, |r| r.timestamp) {
                    Some(i) => {
                        let ts = log.radar[i].timestamp;
                        log.radar.iter().filter(|r| r.timestamp == ts).cloned().collect()
                    }
                    None => Vec::new(),
                };
            let frame_boxes: Vec<CameraBox> = log
                .boxes
                .iter()
                .filter(|b| b.frame_id == frame.frame_id)
                .cloned()
                .collect();
            aligned.lead = select_lead_vehicle(&scan, &frame_boxes, &aligned, cfg);
            aligned
        })
        .collect()
}
