//! Per-frame dataset records, line-delimited JSON emission, corpus
//! statistics, and trajectory overlay geometry.
//!
//! Record keys follow the released vehicle-states schema verbatim,
//! including its mixed naming (`vEgo` next to `trajectory_count`); schema
//! fidelity wins over internal consistency.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{euler_from_rotation, geodetic_from_ecef, ned_rotation, body_rotation, CameraModel, Pose};
use crate::ingest::AlignedFrame;
use crate::sampler::{SceneCandidate, BinningConfig};
use crate::trajectory::EgoTrajectory;
use crate::trajfilter::TrajectoryVerdict;
use crate::captioning::CaptionWindow;
use crate::{FRAME_HZ, TRAJECTORY_LEN};

/// One dataset frame. Field order and names mirror the released schema.
/// The `*_calib` fields and the camera matrices are nullable: calibrated
/// -frame values are upstream pass-through we may not have, and not every
/// recording carries a camera model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub image_path: String,
    #[serde(rename = "vEgo")]
    pub v_ego: f64,
    #[serde(rename = "vEgoRaw")]
    pub v_ego_raw: f64,
    #[serde(rename = "aEgo")]
    pub a_ego: f64,
    #[serde(rename = "steeringAngleDeg")]
    pub steering_angle_deg: f64,
    #[serde(rename = "steeringTorque")]
    pub steering_torque: f64,
    pub brake: f64,
    #[serde(rename = "brakePressed")]
    pub brake_pressed: bool,
    pub gas: f64,
    #[serde(rename = "gasPressed")]
    pub gas_pressed: bool,
    #[serde(rename = "doorOpen")]
    pub door_open: bool,
    #[serde(rename = "seatbeltUnlatched")]
    pub seatbelt_unlatched: bool,
    #[serde(rename = "gearShifter")]
    pub gear_shifter: String,
    #[serde(rename = "leftBlinker")]
    pub left_blinker: bool,
    #[serde(rename = "rightBlinker")]
    pub right_blinker: bool,
    pub orientations_calib: Option<[f64; 3]>,
    pub orientations_ecef: [f64; 3],
    pub orientations_ned: [f64; 3],
    pub positions_ecef: [f64; 3],
    pub velocities_calib: Option<[f64; 3]>,
    pub velocities_ecef: [f64; 3],
    pub accelerations_calib: Option<[f64; 3]>,
    pub accelerations_device: Option<[f64; 3]>,
    pub angular_velocities_calib: Option<[f64; 3]>,
    pub angular_velocities_device: Option<[f64; 3]>,
    pub timestamp: i64,
    pub extrinsic_matrix: Option<[[f64; 4]; 4]>,
    pub intrinsic_matrix: Option<[[f64; 3]; 3]>,
    pub trajectory_count: usize,
    pub trajectory: Vec<[f64; 3]>,
    pub caption: String,
}

impl FrameRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.trajectory_count != self.trajectory.len() {
            return Err(format!(
                "trajectory_count {} != trajectory rows {}",
                self.trajectory_count,
                self.trajectory.len()
            ));
        }
        if self.trajectory_count > TRAJECTORY_LEN {
            return Err(format!("trajectory_count {} exceeds {TRAJECTORY_LEN}", self.trajectory_count));
        }
        if let Some(first) = self.trajectory.first() {
            if first != &[0.0, 0.0, 0.0] {
                return Err(format!("trajectory must start at the origin, got {first:?}"));
            }
        }
        Ok(())
    }
}

/// Everything the pipeline knows about one selected scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub candidate: SceneCandidate,
    pub verdicts: Vec<TrajectoryVerdict>,
    pub windows: Vec<CaptionWindow>,
}

/// Build one record from its aligned inputs. All inputs must describe the
/// same instant.
pub fn assemble_record(
    frame: &AlignedFrame,
    pose: &Pose,
    traj: &EgoTrajectory,
    caption: &str,
    cam: Option<&CameraModel>,
) -> Result<FrameRecord> {
    if pose.timestamp != frame.frame.timestamp {
        return Err(Error::FrameMismatch(format!(
            "pose at {} paired with frame at {}",
            pose.timestamp, frame.frame.timestamp
        )));
    }
    let can = frame
        .can
        .as_ref()
        .ok_or_else(|| Error::FrameMismatch(format!("frame {} has no CAN snapshot", frame.frame.frame_id)))?;

    let g = geodetic_from_ecef(pose.position_ecef);
    let body_in_ecef = body_rotation(pose.orientation_ned) * ned_rotation(g.lat, g.lon);
    let orientations_ecef = euler_from_rotation(&body_in_ecef);

    Ok(FrameRecord {
        frame_id: frame.frame.frame_id,
        image_path: frame.frame.image_path.clone(),
        v_ego: can.v_ego,
        v_ego_raw: can.v_ego_raw,
        a_ego: can.a_ego,
        steering_angle_deg: can.steering_angle,
        steering_torque: can.steering_torque,
        brake: can.brake,
        brake_pressed: can.brake_pressed,
        gas: can.gas,
        gas_pressed: can.gas_pressed,
        door_open: can.door_open,
        seatbelt_unlatched: can.seatbelt_unlatched,
        gear_shifter: String::from(can.gear.clone()),
        left_blinker: can.left_blinker,
        right_blinker: can.right_blinker,
        orientations_calib: None,
        orientations_ecef: orientations_ecef.into(),
        orientations_ned: pose.orientation_ned.into(),
        positions_ecef: pose.position_ecef.into(),
        velocities_calib: None,
        velocities_ecef: pose.velocity_ecef.into(),
        accelerations_calib: None,
        accelerations_device: frame.imu.as_ref().map(|s| s.accel_device),
        angular_velocities_calib: None,
        angular_velocities_device: frame.imu.as_ref().map(|s| s.gyro_device),
        timestamp: frame.frame.timestamp,
        extrinsic_matrix: cam.map(|c| c.extrinsic_rows()),
        intrinsic_matrix: cam.map(|c| c.intrinsic_rows()),
        trajectory_count: traj.trajectory_count,
        trajectory: traj.points.clone(),
        caption: caption.to_string(),
    })
}

/// Write records as one JSON object per line. Floats use the shortest
/// representation that round-trips, so re-emitting read records is
/// byte-stable.
pub fn emit_jsonl(records: &[FrameRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read a records file, validating the per-record invariants.
pub fn read_jsonl(path: &Path) -> Result<Vec<FrameRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source: e,
        })?;
        record.validate().map_err(|reason| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Corpus-level statistics over emitted records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub frame_count: usize,
    pub scene_count: usize,
    /// frame_count / (20 Hz · 3600 s).
    pub hours: f64,
    /// Fraction of frames with either blinker on.
    pub blinker_fraction: f64,
    /// Fraction of frames whose caption reports a traffic light.
    pub traffic_light_fraction: f64,
    /// Frames per 10 km/h speed bin (last bin is open-ended).
    pub speed_hist_kmh: Vec<u64>,
    /// Frames per |steering| bin using the sampling edges.
    pub steering_hist_deg: Vec<u64>,
    pub empty: bool,
}

const STATS_SPEED_BINS: usize = 13; // 0..130+ km/h

pub fn compute_stats(records: &[FrameRecord], scene_count: usize) -> DatasetStats {
    let frame_count = records.len();
    let mut blinkers = 0usize;
    let mut lights = 0usize;
    let mut speed_hist_kmh = vec![0u64; STATS_SPEED_BINS];
    let edges = BinningConfig::default().steering_edges;
    let mut steering_hist_deg = vec![0u64; edges.len() + 1];
    for r in records {
        if r.left_blinker || r.right_blinker {
            blinkers += 1;
        }
        if r.caption.contains("traffic light") {
            lights += 1;
        }
        let kmh = r.v_ego.max(0.0) * 3.6;
        speed_hist_kmh[((kmh / 10.0) as usize).min(STATS_SPEED_BINS - 1)] += 1;
        steering_hist_deg[edges.partition_point(|e| *e <= r.steering_angle_deg.abs())] += 1;
    }
    let frac = |n: usize| if frame_count == 0 { 0.0 } else { n as f64 / frame_count as f64 };
    DatasetStats {
        frame_count,
        scene_count,
        hours: frame_count as f64 / (FRAME_HZ * 3600.0),
        blinker_fraction: frac(blinkers),
        traffic_light_fraction: frac(lights),
        speed_hist_kmh,
        steering_hist_deg,
        empty: frame_count == 0,
    }
}

/// Project a record's trajectory into its own camera. Points at or behind
/// the near plane are dropped; output order follows trajectory order.
pub fn overlay_geometry(record: &FrameRecord) -> Result<Vec<(f64, f64)>> {
    let (intrinsic, extrinsic) = match (record.intrinsic_matrix, record.extrinsic_matrix) {
        (Some(i), Some(e)) => (i, e),
        _ => return Err(Error::MissingCamera),
    };
    let cam = CameraModel::from_rows(intrinsic, extrinsic);
    Ok(record
        .trajectory
        .iter()
        .filter_map(|p| cam.project(nalgebra::Vector3::from(*p)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn minimal_record(frame_id: u64, trajectory: Vec<[f64; 3]>) -> FrameRecord {
        FrameRecord {
            frame_id,
            image_path: format!("images/rec/{frame_id:04}.png"),
            v_ego: 7.5,
            v_ego_raw: 7.5,
            a_ego: 0.1,
            steering_angle_deg: -2.0,
            steering_torque: 10.0,
            brake: 0.0,
            brake_pressed: false,
            gas: 0.1,
            gas_pressed: true,
            door_open: false,
            seatbelt_unlatched: false,
            gear_shifter: "drive".into(),
            left_blinker: false,
            right_blinker: false,
            orientations_calib: None,
            orientations_ecef: [0.1, 0.2, 0.3],
            orientations_ned: [0.0, 0.0, 1.0],
            positions_ecef: [-3959574.0, 3328427.0, 3719065.0],
            velocities_calib: None,
            velocities_ecef: [1.0, 2.0, 3.0],
            accelerations_calib: None,
            accelerations_device: Some([0.4, 0.0, -0.1]),
            angular_velocities_calib: None,
            angular_velocities_device: Some([0.0, 0.0, 0.01]),
            timestamp: 1_657_248_173_200,
            extrinsic_matrix: None,
            intrinsic_matrix: None,
            trajectory_count: trajectory.len(),
            trajectory,
            caption: "The vehicle is maintaining speed, driving slowly.".into(),
        }
    }

    fn random_trajectory(rng: &mut impl Rng) -> Vec<[f64; 3]> {
        let n = match rng.random_range(0..3) {
            0 => 0,
            1 => TRAJECTORY_LEN,
            _ => rng.random_range(2..TRAJECTORY_LEN),
        };
        (0..n)
            .map(|i| {
                if i == 0 {
                    [0.0, -0.0, 0.0]
                } else {
                    [rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)]
                }
            })
            .collect()
    }

    fn random_record(rng: &mut impl Rng, id: u64) -> FrameRecord {
        let mut r = minimal_record(id, random_trajectory(rng));
        r.v_ego = rng.random_range(0.0..30.0);
        r.a_ego = rng.random_range(-3.0..3.0);
        r.steering_angle_deg = rng.random_range(-540.0..540.0);
        r.left_blinker = rng.random_bool(0.1);
        r.right_blinker = rng.random_bool(0.1);
        r.orientations_calib = rng.random_bool(0.5).then(|| [rng.random(), rng.random(), rng.random()]);
        r.velocities_calib = rng.random_bool(0.5).then(|| [rng.random(), rng.random(), rng.random()]);
        r.accelerations_device = rng.random_bool(0.9).then(|| [rng.random(), rng.random(), rng.random()]);
        r.extrinsic_matrix = rng.random_bool(0.5).then(|| CameraModel::default_front().extrinsic_rows());
        r.intrinsic_matrix = r.extrinsic_matrix.map(|_| CameraModel::default_front().intrinsic_rows());
        r.timestamp = rng.random_range(1_600_000_000_000..1_700_000_000_000);
        r
    }

    #[test]
    fn emit_read_round_trip_on_randomized_records() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let records: Vec<FrameRecord> = (0..1_000).map(|i| random_record(&mut rng, i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        emit_jsonl(&records, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, records);

        // Re-emission is byte-identical (shortest-round-trip floats).
        let path2 = dir.path().join("records2.jsonl");
        emit_jsonl(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn empty_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        emit_jsonl(&[], &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
        assert_eq!(read_jsonl(&path).unwrap(), vec![]);
    }

    #[test]
    fn schema_violations_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&minimal_record(0, vec![])).unwrap();
        let missing = good.replace("\"trajectory_count\":0,", "");
        std::fs::write(&path, format!("{good}\n{missing}\n")).unwrap();
        match read_jsonl(&path).unwrap_err() {
            Error::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("expected json error, got {other:?}"),
        }

        let mut inconsistent = minimal_record(0, vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        inconsistent.trajectory_count = 60;
        let line = serde_json::to_string(&inconsistent).unwrap();
        std::fs::write(&path, format!("{line}\n")).unwrap();
        match read_jsonl(&path).unwrap_err() {
            Error::Schema { line, .. } => assert_eq!(line, 1),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn stats_arithmetic() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut records: Vec<FrameRecord> = (0..1_000).map(|i| random_record(&mut rng, i)).collect();
        for r in records.iter_mut() {
            r.left_blinker = false;
            r.right_blinker = false;
            r.caption = "clear".into();
        }
        for r in records.iter_mut().take(161) {
            r.left_blinker = true;
        }
        for r in records.iter_mut().take(229) {
            r.caption = "A red traffic light is visible.".into();
        }
        let stats = compute_stats(&records, 2);
        assert_eq!(stats.frame_count, 1_000);
        assert!((stats.blinker_fraction - 0.161).abs() < 1e-12);
        assert!((stats.traffic_light_fraction - 0.229).abs() < 1e-12);
        assert_eq!(stats.hours, 1_000.0 / 72_000.0);
        assert_eq!(stats.speed_hist_kmh.iter().sum::<u64>(), 1_000);
        assert_eq!(stats.steering_hist_deg.iter().sum::<u64>(), 1_000);
        assert!(!stats.empty);

        // 6,000,000 frames at 20 FPS are 83.33 hours.
        let hours = 6_000_000.0 / (FRAME_HZ * 3600.0);
        assert!((hours - 83.333333).abs() < 1e-3);

        let empty = compute_stats(&[], 0);
        assert!(empty.empty);
        assert_eq!(empty.blinker_fraction, 0.0);
        assert_eq!(empty.hours, 0.0);
    }

    #[test]
    fn overlay_projects_toward_horizon() {
        let cam = CameraModel::default_front();
        let trajectory: Vec<[f64; 3]> = (0..60).map(|i| [i as f64 * 0.35, 0.0, 0.0]).collect();
        let mut record = minimal_record(7, trajectory);
        record.intrinsic_matrix = Some(cam.intrinsic_rows());
        record.extrinsic_matrix = Some(cam.extrinsic_rows());

        let points = overlay_geometry(&record).unwrap();
        // The origin point sits at zero depth and is culled.
        assert_eq!(points.len(), 59);
        for w in points.windows(2) {
            assert!(w[1].1 < w[0].1, "v must fall toward the horizon");
            assert!(w[1].1 > 604.0);
        }
        for (u, _) in &points {
            assert!((u - 964.0).abs() < 1e-9);
        }

        record.trajectory = vec![[0.0; 3]; 60];
        assert!(overlay_geometry(&record).unwrap().is_empty());

        record.intrinsic_matrix = None;
        assert!(matches!(overlay_geometry(&record), Err(Error::MissingCamera)));
    }

    #[test]
    fn assemble_checks_stream_consistency() {
        use crate::ingest::{CanFrame, FrameIndex, Gear, ImuSample};
        let pose = Pose {
            position_ecef: Vector3::new(-3959574.0, 3328427.0, 3719065.0),
            velocity_ecef: Vector3::new(1.0, 2.0, 3.0),
            orientation_ned: Vector3::new(0.0, 0.0, -2.99),
            timestamp: 1000,
        };
        let frame = AlignedFrame {
            frame: FrameIndex { frame_id: 12, timestamp: 1000, image_path: "a.png".into() },
            can: Some(CanFrame {
                timestamp: 990,
                v_ego: 7.43,
                v_ego_raw: 7.44,
                a_ego: 0.6,
                steering_angle: 0.6,
                steering_torque: 69.0,
                brake: 0.0,
                brake_pressed: false,
                gas: 0.2,
                gas_pressed: true,
                door_open: false,
                seatbelt_unlatched: false,
                gear: Gear::Drive,
                left_blinker: false,
                right_blinker: false,
            }),
            imu: Some(ImuSample { timestamp: 995, accel_device: [0.47, 0.08, -0.13], gyro_device: [0.01, 0.01, -0.01] }),
            gnss_ecef: Some([0.0; 3]),
            gnss_available: true,
            lights: vec![],
            lead: None,
        };
        let traj = EgoTrajectory::new(vec![[0.0, -0.0, 0.0], [0.37, 0.0, 0.0]]);
        let cam = CameraModel::default_front();

        let record = assemble_record(&frame, &pose, &traj, "caption text", Some(&cam)).unwrap();
        assert_eq!(record.frame_id, 12);
        assert_eq!(record.gear_shifter, "drive");
        assert_eq!(record.trajectory_count, 2);
        assert_eq!(record.accelerations_device, Some([0.47, 0.08, -0.13]));
        assert_eq!(record.orientations_ned, [0.0, 0.0, -2.99]);
        assert!(record.orientations_calib.is_none());
        assert!(record.intrinsic_matrix.is_some());
        record.validate().unwrap();

        let stale = Pose { timestamp: 950, ..pose };
        assert!(matches!(
            assemble_record(&frame, &stale, &traj, "", Some(&cam)),
            Err(Error::FrameMismatch(_))
        ));

        let mut no_can = frame.clone();
        no_can.can = None;
        assert!(matches!(
            assemble_record(&no_can, &pose, &traj, "", None),
            Err(Error::FrameMismatch(_))
        ));
    }

    #[test]
    fn stationary_frame_has_all_zero_trajectory() {
        let record = minimal_record(0, vec![[0.0, 0.0, 0.0]; 60]);
        record.validate().unwrap();
        assert_eq!(record.trajectory_count, 60);
        assert!(record.trajectory.iter().all(|p| p == &[0.0; 3]));
    }
}
