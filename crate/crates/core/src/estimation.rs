//! Loosely-coupled GNSS/IMU fusion: IMU-driven prediction of a
//! position/velocity/yaw state with GNSS position updates, sampled at the
//! camera clock to give one pose per frame.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{body_rotation, geodetic_from_ecef, ned_rotation, Pose};
use crate::ingest::{GnssFix, ImuSample, SensorLog};

/// Filter and initialization noise magnitudes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// GNSS position measurement sigma, meters.
    pub gnss_sigma: f64,
    /// Accelerometer process sigma, m/s².
    pub accel_sigma: f64,
    /// Gyro process sigma, rad/s.
    pub gyro_sigma: f64,
    /// Initial position sigma, meters.
    pub initial_pos_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { gnss_sigma: 1.5, accel_sigma: 0.3, gyro_sigma: 0.01, initial_pos_sigma: 5.0 }
    }
}

const N_STATES: usize = 7;
type Cov = SMatrix<f64, N_STATES, N_STATES>;

/// Kalman state: ECEF position and velocity plus NED yaw.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub position_ecef: Vector3<f64>,
    pub velocity_ecef: Vector3<f64>,
    pub yaw_ned: f64,
    pub covariance: Cov,
}

/// Longest single integration step; larger gaps are integrated in chunks.
pub const MAX_DT_S: f64 = 0.25;

fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(std::f64::consts::TAU);
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

fn symmetrize(p: &mut Cov) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Rotate a device-frame (ego axes) vector into ECEF given the filter's yaw
/// estimate, assuming zero roll and pitch.
fn device_to_ecef(state: &FilterState, v_dev: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let g = geodetic_from_ecef(state.position_ecef);
    let r_en = ned_rotation(g.lat, g.lon);
    let r_nb = body_rotation(Vector3::new(0.0, 0.0, state.yaw_ned));
    // Device (x fwd, y left, z up) to body (x fwd, y right, z down).
    let v_body = Vector3::new(v_dev.x, -v_dev.y, -v_dev.z);
    let v_ecef = r_en.transpose() * (r_nb.transpose() * v_body);
    // Partial of the rotated vector w.r.t. yaw, for the Jacobian.
    let (s, c) = state.yaw_ned.sin_cos();
    let d_rz = Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0);
    let d_v = r_en.transpose() * (d_rz * v_body);
    (v_ecef, d_v)
}

/// One process step: integrate IMU kinematics over `dt` and inflate the
/// covariance with process noise.
pub fn predict(state: &FilterState, imu: &ImuSample, dt: f64, cfg: &NoiseConfig) -> Result<FilterState> {
    if !(dt > 0.0 && dt <= MAX_DT_S) {
        return Err(Error::InvalidDt(dt));
    }
    let (a_ecef, da_dyaw) = device_to_ecef(state, Vector3::from(imu.accel_device));
    // Device z is up; NED yaw is positive clockwise seen from above.
    let yaw_rate = -imu.gyro_device[2];

    let position = state.position_ecef + state.velocity_ecef * dt + a_ecef * (0.5 * dt * dt);
    let velocity = state.velocity_ecef + a_ecef * dt;
    let yaw_ned = wrap_angle(state.yaw_ned + yaw_rate * dt);

    let mut f = Cov::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
        f[(i, 6)] = 0.5 * dt * dt * da_dyaw[i];
        f[(i + 3, 6)] = dt * da_dyaw[i];
    }

    let qa = cfg.accel_sigma * cfg.accel_sigma;
    let (q_pp, q_pv, q_vv) = (qa * dt.powi(4) / 4.0, qa * dt.powi(3) / 2.0, qa * dt * dt);
    let mut q = Cov::zeros();
    for i in 0..3 {
        q[(i, i)] = q_pp;
        q[(i, i + 3)] = q_pv;
        q[(i + 3, i)] = q_pv;
        q[(i + 3, i + 3)] = q_vv;
    }
    q[(6, 6)] = cfg.gyro_sigma * cfg.gyro_sigma * dt * dt;

    let mut covariance = f * state.covariance * f.transpose() + q;
    symmetrize(&mut covariance);
    Ok(FilterState { position_ecef: position, velocity_ecef: velocity, yaw_ned, covariance })
}

/// Linear position measurement update in Joseph form.
pub fn update_gnss(state: &FilterState, fix: &GnssFix, cfg: &NoiseConfig) -> Result<FilterState> {
    if !fix.fix_valid {
        return Err(Error::InvalidFix);
    }
    let p = &state.covariance;
    let r = Matrix3::identity() * (cfg.gnss_sigma * cfg.gnss_sigma);
    let s = p.fixed_view::<3, 3>(0, 0) + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Estimation("singular innovation covariance".into()))?;
    let k = p.fixed_view::<N_STATES, 3>(0, 0) * s_inv;

    let innovation = fix.ecef() - state.position_ecef;
    let dx = k * innovation;

    let mut i_kh = Cov::identity();
    for row in 0..N_STATES {
        for col in 0..3 {
            i_kh[(row, col)] -= k[(row, col)];
        }
    }

    let mut covariance = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    symmetrize(&mut covariance);

    Ok(FilterState {
        position_ecef: state.position_ecef + dx.fixed_rows::<3>(0).into_owned(),
        velocity_ecef: state.velocity_ecef + dx.fixed_rows::<3>(3).into_owned(),
        yaw_ned: wrap_angle(state.yaw_ned + dx[6]),
        covariance,
    })
}

enum Event<'a> {
    Imu(&'a ImuSample),
    Gnss(&'a GnssFix),
    Frame,
}

impl Event<'_> {
    fn priority(&self) -> u8 {
        match self {
            Event::Imu(_) => 0,
            Event::Gnss(_) => 1,
            Event::Frame => 2,
        }
    }
}

/// Run the filter over a whole recording and sample one pose per camera
/// frame. Deterministic; forward-only (no smoothing).
pub fn estimate_path(log: &SensorLog, cfg: &NoiseConfig) -> Result<Vec<Pose>> {
    if log.frames.is_empty() {
        return Err(Error::Estimation("recording has no frames".into()));
    }
    let valid: Vec<&GnssFix> = log.gnss.iter().filter(|f| f.fix_valid).collect();
    let first = *valid.first().ok_or(Error::NoGnss)?;
    let t0 = first.timestamp;
    let p0 = first.ecef();

    // Heading and velocity from the displacement over roughly the first
    // second of GNSS; below 1 m of displacement both stay at zero with a
    // large yaw variance (IMU alone cannot observe heading).
    let second = valid
        .iter()
        .find(|f| f.timestamp >= t0 + 1_000)
        .or_else(|| valid.last().filter(|f| f.timestamp > t0))
        .copied();
    let mut velocity = Vector3::zeros();
    let mut yaw = 0.0;
    let mut yaw_var = 10.0;
    let mut vel_sigma = 5.0;
    if let Some(second) = second {
        let disp = second.ecef() - p0;
        let dt_s = (second.timestamp - t0) as f64 / 1_000.0;
        if disp.norm() >= 1.0 {
            velocity = disp / dt_s;
            let g = geodetic_from_ecef(p0);
            let ned = ned_rotation(g.lat, g.lon) * disp;
            yaw = ned.y.atan2(ned.x);
            yaw_var = 0.05 * 0.05;
            vel_sigma = (2.0 * cfg.gnss_sigma / dt_s).max(0.5);
        }
    }

    let mut covariance = Cov::zeros();
    for i in 0..3 {
        covariance[(i, i)] = cfg.initial_pos_sigma * cfg.initial_pos_sigma;
        covariance[(i + 3, i + 3)] = vel_sigma * vel_sigma;
    }
    covariance[(6, 6)] = yaw_var;
    let mut state = FilterState { position_ecef: p0, velocity_ecef: velocity, yaw_ned: yaw, covariance };

    // Frames before the first fix get a linear back-extrapolation of the
    // initial state; IMU samples before it are discarded.
    let mut poses: Vec<Pose> = Vec::with_capacity(log.frames.len());
    for (i, fr) in log.frames.iter().enumerate() {
        if fr.timestamp >= t0 {
            break;
        }
        let dt_s = (fr.timestamp - t0) as f64 / 1_000.0;
        poses.push(Pose {
            position_ecef: p0 + velocity * dt_s,
            velocity_ecef: velocity,
            orientation_ned: Vector3::new(0.0, 0.0, yaw),
            timestamp: fr.timestamp,
        });
        debug_assert_eq!(poses.len(), i + 1);
    }

    // Merge the three streams into one time-ordered event sequence; ties
    // process IMU first, then GNSS, then the frame snapshot.
    let mut events: Vec<(i64, Event)> = Vec::new();
    events.extend(log.imu.iter().filter(|s| s.timestamp >= t0).map(|s| (s.timestamp, Event::Imu(s))));
    events.extend(valid.iter().filter(|f| f.timestamp >= t0).map(|f| (f.timestamp, Event::Gnss(f))));
    events.extend(
        log.frames
            .iter()
            .filter(|f| f.timestamp >= t0)
            .map(|f| (f.timestamp, Event::Frame)),
    );
    events.sort_by_key(|(ts, ev)| (*ts, ev.priority()));

    let mut cursor = t0;
    let mut held = ImuSample { timestamp: t0, accel_device: [0.0; 3], gyro_device: [0.0; 3] };
    for (ts, event) in events {
        let mut remaining = (ts - cursor) as f64 / 1_000.0;
        while remaining > 0.0 {
            let step = remaining.min(MAX_DT_S);
            state = predict(&state, &held, step, cfg)?;
            remaining -= step;
        }
        cursor = ts;
        match event {
            Event::Imu(s) => held = s.clone(),
            Event::Gnss(f) => state = update_gnss(&state, f, cfg)?,
            Event::Frame => poses.push(Pose {
                position_ecef: state.position_ecef,
                velocity_ecef: state.velocity_ecef,
                orientation_ned: Vector3::new(0.0, 0.0, state.yaw_ned),
                timestamp: ts,
            }),
        }
    }
    debug_assert_eq!(poses.len(), log.frames.len());
    Ok(poses)
}
