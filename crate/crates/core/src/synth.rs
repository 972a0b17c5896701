//! Labeled synthetic recordings: ground-truth kinematics on a local tangent
//! plane, rendered into the recording directory layout with configurable
//! sensor noise and fault injection. The truth sidecars make every
//! downstream stage testable against known answers.

use std::path::Path;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{ecef_from_geodetic, ned_rotation, Geodetic, Pose};
use crate::ingest::{write_log, CanFrame, FrameIndex, Gear, GnssFix, ImuSample, SensorLog};
use crate::sampler::{cell_of, extract_features, BinningConfig, Cell};
use crate::{FRAME_HZ, SCENE_FRAMES};

/// Epoch of the first frame of every synthetic recording, milliseconds.
pub const BASE_EPOCH_MS: i64 = 1_700_000_000_000;

/// Wheelbase used to derive a steering angle from the commanded yaw rate.
pub const WHEELBASE_M: f64 = 2.7;

/// Tangent-plane anchor all synthetic recordings share.
fn anchor() -> Geodetic {
    Geodetic { lat: 35.36_f64.to_radians(), lon: 139.35_f64.to_radians(), alt: 30.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Straight,
    ConstantTurn,
    StopAndGo,
    LaneChange,
}

/// A parametric driving maneuver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub kind: ProfileKind,
    /// Cruise speed, m/s.
    pub speed: f64,
    /// Yaw rate about the up axis, rad/s, positive left. Peak rate for
    /// lane changes; ignored for straight and stop-and-go profiles.
    pub yaw_rate: f64,
    /// Recording length, seconds.
    pub duration_s: f64,
    pub seed: u64,
}

impl MotionProfile {
    pub fn new(kind: ProfileKind, speed: f64, yaw_rate: f64, duration_s: f64) -> Self {
        MotionProfile { kind, speed, yaw_rate, duration_s, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("profile duration {} s", self.duration_s)));
        }
        if !(self.speed >= 0.0 && self.speed.is_finite() && self.yaw_rate.is_finite()) {
            return Err(Error::Config("profile speed/yaw rate out of range".into()));
        }
        Ok(())
    }

    /// (speed m/s, longitudinal accel m/s², yaw rate rad/s) at time `t`
    /// seconds from the start.
    fn state_at(&self, t: f64) -> (f64, f64, f64) {
        match self.kind {
            ProfileKind::Straight => (self.speed, 0.0, 0.0),
            ProfileKind::ConstantTurn => (self.speed, 0.0, self.yaw_rate),
            ProfileKind::StopAndGo => {
                // 5 s phases: cruise, brake to zero, hold, accelerate back.
                const PHASE_S: f64 = 5.0;
                let tau = t.rem_euclid(PHASE_S);
                match (t / PHASE_S).floor() as i64 % 4 {
                    0 => (self.speed, 0.0, 0.0),
                    1 => (self.speed * (1.0 - tau / PHASE_S), -self.speed / PHASE_S, 0.0),
                    2 => (0.0, 0.0, 0.0),
                    _ => (self.speed * tau / PHASE_S, self.speed / PHASE_S, 0.0),
                }
            }
            ProfileKind::LaneChange => {
                // One sinusoidal swerve over [10 s, 14 s]: net heading
                // change integrates to zero, leaving a lateral offset.
                const START_S: f64 = 10.0;
                const SWERVE_S: f64 = 4.0;
                let yaw_rate = if (START_S..START_S + SWERVE_S).contains(&t) {
                    self.yaw_rate * (std::f64::consts::TAU * (t - START_S) / SWERVE_S).sin()
                } else {
                    0.0
                };
                (self.speed, 0.0, yaw_rate)
            }
        }
    }

    /// True while the maneuver would have a turn signal on.
    fn blinker_at(&self, t: f64) -> (bool, bool) {
        match self.kind {
            ProfileKind::ConstantTurn if self.yaw_rate != 0.0 => {
                (self.yaw_rate > 0.0, self.yaw_rate < 0.0)
            }
            ProfileKind::LaneChange if (9.0..14.0).contains(&t) && self.yaw_rate != 0.0 => {
                (self.yaw_rate > 0.0, self.yaw_rate < 0.0)
            }
            _ => (false, false),
        }
    }
}

/// Ground truth for one recording: fused poses at 20 Hz and the CAN stream
/// that a vehicle driving them would produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub profile: MotionProfile,
    pub poses: Vec<Pose>,
    pub can: Vec<CanFrame>,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI { w - std::f64::consts::TAU } else { w }
}

/// Integrate the profile into poses on a fixed tangent plane. Velocities
/// are integrated with the explicit Euler rule, so positions reproduce the
/// stored velocities exactly: `p[k+1] - p[k] == v[k]·dt`.
pub fn gen_truth(profile: &MotionProfile) -> Result<Truth> {
    profile.validate()?;
    let dt = 1.0 / FRAME_HZ;
    let steps = (profile.duration_s * FRAME_HZ).round() as usize;
    let origin = ecef_from_geodetic(anchor());
    // One shared rotation keeps the NED→ECEF conversion rigid.
    let to_ecef = ned_rotation(anchor().lat, anchor().lon).transpose();

    let mut poses = Vec::with_capacity(steps + 1);
    let mut can = Vec::with_capacity(steps + 1);
    let mut p_ned = Vector3::zeros();
    let mut yaw: f64 = 0.0; // NED yaw, clockwise from north
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (speed, accel, yaw_rate) = profile.state_at(t);
        let v_ned = Vector3::new(yaw.cos() * speed, yaw.sin() * speed, 0.0);
        let timestamp = BASE_EPOCH_MS + (k as i64) * 50;
        poses.push(Pose {
            position_ecef: origin + to_ecef * p_ned,
            velocity_ecef: to_ecef * v_ned,
            orientation_ned: Vector3::new(0.0, 0.0, wrap_angle(yaw)),
            timestamp,
        });
        let steering_angle = if speed > 1e-6 {
            (yaw_rate * WHEELBASE_M / speed).atan().to_degrees()
        } else {
            0.0
        };
        let (left_blinker, right_blinker) = profile.blinker_at(t);
        can.push(CanFrame {
            timestamp,
            v_ego: speed,
            v_ego_raw: speed,
            a_ego: accel,
            steering_angle,
            steering_torque: steering_angle * 5.0,
            brake: if accel < 0.0 { 0.3 } else { 0.0 },
            brake_pressed: accel < 0.0,
            gas: if accel > 0.0 { 0.2 } else { 0.0 },
            gas_pressed: accel > 0.0,
            door_open: false,
            seatbelt_unlatched: false,
            gear: Gear::Drive,
            left_blinker,
            right_blinker,
        });
        p_ned += v_ned * dt;
        // A device-frame yaw rate about the up axis swings the NED yaw the
        // opposite way (NED z points down).
        yaw -= yaw_rate * dt;
    }
    Ok(Truth { profile: profile.clone(), poses, can })
}

/// Sensor noise and fault injection knobs. Times are seconds from the
/// recording start.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub gnss_sigma: f64,
    pub imu_accel_sigma: f64,
    /// Intervals with no GNSS fixes at all.
    pub gnss_dropout: Vec<(f64, f64)>,
    /// (time, displacement m): a permanent position offset appearing at
    /// `time`.
    pub jump_injections: Vec<(f64, f64)>,
    pub vibration_injections: Vec<VibrationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VibrationSpec {
    pub start_s: f64,
    pub end_s: f64,
    pub amplitude_m: f64,
    pub frequency_hz: f64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gnss_sigma < 0.0 || self.imu_accel_sigma < 0.0 {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        if self.jump_injections.iter().any(|(_, d)| *d < 0.0)
            || self.vibration_injections.iter().any(|v| v.amplitude_m < 0.0 || v.frequency_hz <= 0.0)
        {
            return Err(Error::Config("fault amplitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// Frames carrying an injected fault, by kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultLabels {
    pub jump_frames: Vec<u64>,
    pub vibration_frames: Vec<u64>,
}

/// A rendered recording: the raw sensor streams, the poses the faulted
/// position track actually follows (for frame-exact verdict comparison),
/// and the fault bookkeeping.
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub log: SensorLog,
    pub faulted_poses: Vec<Pose>,
    pub labels: FaultLabels,
}

fn seconds_from_start(pose: &Pose, start_ms: i64) -> f64 {
    (pose.timestamp - start_ms) as f64 / 1_000.0
}

/// Render ground truth into sensor streams: GNSS (10 Hz) follows the
/// faulted positions, IMU (100 Hz) follows the clean profile, CAN is the
/// truth stream verbatim. Noise is Gaussian from a seeded generator; a
/// zero spec reproduces the truth exactly.
pub fn corrupt(truth: &Truth, spec: &CorruptionSpec, seed: u64) -> Result<Corrupted> {
    spec.validate()?;
    let start_ms = truth.poses.first().map_or(BASE_EPOCH_MS, |p| p.timestamp);

    // Fault injection at the pose level; sensors sample the faulted track.
    let mut faulted = truth.poses.clone();
    let mut labels = FaultLabels::default();
    for &(time_s, displacement) in &spec.jump_injections {
        let Some(at) = faulted.iter().position(|p| seconds_from_start(p, start_ms) >= time_s)
        else {
            continue;
        };
        let left = faulted[at].ego_vector_to_world(Vector3::new(0.0, 1.0, 0.0));
        for pose in &mut faulted[at..] {
            pose.position_ecef += left * displacement;
        }
        labels.jump_frames.push(at as u64);
    }
    for vib in &spec.vibration_injections {
        for (i, pose) in faulted.iter_mut().enumerate() {
            let t = seconds_from_start(pose, start_ms);
            if t < vib.start_s || t > vib.end_s {
                continue;
            }
            // Square-wave lateral offset: sign flips every half period. A
            // sample on a boundary (up to rounding) opens the new half
            // period, so a 10 Hz wave alternates every 20 Hz frame.
            let x = (t - vib.start_s) * 2.0 * vib.frequency_hz;
            let snapped = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.floor() };
            let sign = if snapped as i64 % 2 == 0 { 1.0 } else { -1.0 };
            let left = pose.ego_vector_to_world(Vector3::new(0.0, 1.0, 0.0));
            pose.position_ecef += left * (sign * vib.amplitude_m);
            labels.vibration_frames.push(i as u64);
        }
    }
    labels.jump_frames.sort_unstable();
    labels.vibration_frames.sort_unstable();
    labels.vibration_frames.dedup();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let gnss_noise = Normal::new(0.0, spec.gnss_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let imu_noise =
        Normal::new(0.0, spec.imu_accel_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut perturb = |base: [f64; 3], noise: &Normal<f64>, sigma: f64| {
        if sigma == 0.0 {
            base
        } else {
            [base[0] + noise.sample(&mut rng), base[1] + noise.sample(&mut rng), base[2] + noise.sample(&mut rng)]
        }
    };

    let frames: Vec<FrameIndex> = truth
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| FrameIndex {
            frame_id: i as u64,
            timestamp: p.timestamp,
            image_path: format!("images/{i:04}.png"),
        })
        .collect();

    let mut gnss = Vec::new();
    for (i, pose) in faulted.iter().enumerate() {
        if i % 2 != 0 {
            continue; // 10 Hz
        }
        let t = seconds_from_start(pose, start_ms);
        if spec.gnss_dropout.iter().any(|&(a, b)| t >= a && t <= b) {
            continue;
        }
        gnss.push(GnssFix {
            timestamp: pose.timestamp,
            position_ecef: perturb(pose.position_ecef.into(), &gnss_noise, spec.gnss_sigma),
            fix_valid: true,
        });
    }

    let mut imu = Vec::new();
    let last_ms = truth.poses.last().map_or(start_ms, |p| p.timestamp);
    let mut ts = start_ms;
    while ts <= last_ms {
        let t = (ts - start_ms) as f64 / 1_000.0;
        let (speed, accel, yaw_rate) = truth.profile.state_at(t);
        imu.push(ImuSample {
            timestamp: ts,
            // Device frame (x fwd, y left, z up): longitudinal accel plus
            // the centripetal term toward the inside of the turn.
            accel_device: perturb(
                [accel, speed * yaw_rate, 0.0],
                &imu_noise,
                spec.imu_accel_sigma,
            ),
            gyro_device: [0.0, 0.0, yaw_rate],
        });
        ts += 10; // 100 Hz
    }

    let log = SensorLog {
        can: truth.can.clone(),
        gnss,
        imu,
        frames,
        ..SensorLog::default()
    };
    Ok(Corrupted { log, faulted_poses: faulted, labels })
}

/// How to build a corpus of synthetic recordings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub scenes: usize,
    /// (profile, weight) pairs; one is drawn per recording.
    pub profile_mix: Vec<(MotionProfile, f64)>,
    pub corruption: CorruptionSpec,
    pub seed: u64,
    /// Write a placeholder image per frame.
    pub write_images: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            scenes: 1,
            profile_mix: vec![
                (MotionProfile::new(ProfileKind::Straight, 10.0, 0.0, 33.0), 0.6),
                (MotionProfile::new(ProfileKind::ConstantTurn, 8.0, 0.1, 33.0), 0.2),
                (MotionProfile::new(ProfileKind::StopAndGo, 12.0, 0.0, 33.0), 0.1),
                (MotionProfile::new(ProfileKind::LaneChange, 15.0, 0.15, 33.0), 0.1),
            ],
            corruption: CorruptionSpec::default(),
            seed: 0,
            write_images: true,
        }
    }
}

/// Everything known in advance about one generated recording.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthMeta {
    pub recording_id: String,
    pub profile: MotionProfile,
    pub labels: FaultLabels,
    /// Feature cell of the first 600-frame scene under default binning.
    pub cell: Cell,
    pub frame_count: usize,
}

/// Minimal valid 1×1 grayscale PNG.
const PLACEHOLDER_PNG: [u8; 67] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3a,
    0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00, 0x0a, 0x49, 0x44, 0x41, 0x54, 0x78, 0xda, 0x63, 0x68,
    0x00, 0x00, 0x00, 0x82, 0x00, 0x81, 0xda, 0x45, 0x08, 0x3b, 0x00, 0x00, 0x00, 0x00, 0x49,
    0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

/// splitmix64: independent per-scene seeds regardless of scheduling order.
fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        line: 0,
        source: e,
    })
}

fn gen_recording(spec: &CorpusSpec, index: usize, out_dir: &Path) -> Result<TruthMeta> {
    let scene_seed = derive_seed(spec.seed, index as u64);
    let mut rng = ChaCha12Rng::seed_from_u64(scene_seed);
    let mix = WeightedIndex::new(spec.profile_mix.iter().map(|(_, w)| *w))
        .map_err(|e| Error::Config(format!("profile mix: {e}")))?;
    let mut profile = spec.profile_mix[mix.sample(&mut rng)].0.clone();
    profile.seed = scene_seed;

    let truth = gen_truth(&profile)?;
    let corrupted = corrupt(&truth, &spec.corruption, derive_seed(scene_seed, 1))?;

    let recording_id = format!("rec_{index:04}");
    let dir = out_dir.join(&recording_id);
    write_log(&corrupted.log, &dir)?;

    let truth_path = dir.join("truth.jsonl");
    let file = std::fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for pose in &truth.poses {
        serde_json::to_writer(&mut w, pose).map_err(|e| Error::Json {
            path: truth_path.clone(),
            line: 0,
            source: e,
        })?;
        std::io::Write::write_all(&mut w, b"\n").map_err(|e| Error::io(&truth_path, e))?;
    }
    std::io::Write::flush(&mut w).map_err(|e| Error::io(&truth_path, e))?;

    if spec.write_images {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        for frame in &corrupted.log.frames {
            let path = dir.join(&frame.image_path);
            std::fs::write(&path, PLACEHOLDER_PNG).map_err(|e| Error::io(&path, e))?;
        }
    }

    let aligned = crate::ingest::align_to_frames(&corrupted.log);
    let scene = &aligned[..SCENE_FRAMES.min(aligned.len())];
    let meta = TruthMeta {
        recording_id,
        profile,
        labels: corrupted.labels,
        cell: cell_of(&extract_features(scene), &BinningConfig::default()),
        frame_count: corrupted.log.frames.len(),
    };
    write_json(&dir.join("truth_meta.json"), &meta)?;
    Ok(meta)
}

/// Generate `spec.scenes` recordings under `out_dir`, in parallel, each
/// fully determined by `spec.seed` and its index. Returns the metas in
/// recording order.
pub fn gen_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Vec<TruthMeta>> {
    if spec.scenes == 0 {
        return Err(Error::Config("corpus needs at least one scene".into()));
    }
    if spec.profile_mix.is_empty() {
        return Err(Error::Config("profile mix is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut metas = (0..spec.scenes)
        .into_par_iter()
        .map(|i| gen_recording(spec, i, out_dir))
        .collect::<Result<Vec<_>>>()?;
    metas.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    Ok(metas)
}
