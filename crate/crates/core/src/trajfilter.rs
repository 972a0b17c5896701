//! Heuristic rejection of erroneous ego trajectories: single-step jumps
//! (GNSS re-acquisition glitches) and sustained lateral vibration at half
//! the frame rate (wrong-direction estimation noise).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::EgoTrajectory;

/// Tunable limits for both detectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    /// Fastest plausible ego speed, km/h; bounds the legal per-step distance.
    pub max_speed_kmh: f64,
    /// Frame rate the trajectories are sampled at.
    pub fps: f64,
    /// Multiplicative slack on the per-step distance bound.
    pub tolerance: f64,
    /// Residual variance (m²) above which a trajectory counts as vibrating.
    pub vibration_variance_threshold: f64,
    /// Centered smoothing window; must be odd.
    pub moving_average_window: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            max_speed_kmh: 100.0,
            fps: 20.0,
            tolerance: 1.15,
            vibration_variance_threshold: 2.5e-3,
            moving_average_window: 3,
        }
    }
}

/// Outcome for one trajectory. `metric` is the max step (meters) for jump
/// checks and the residual variance (m²) for vibration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryVerdict {
    pub valid: bool,
    pub reason: VerdictReason,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictReason {
    Ok,
    Jump,
    Vibration,
}

fn ok(metric: f64) -> TrajectoryVerdict {
    TrajectoryVerdict { valid: true, reason: VerdictReason::Ok, metric }
}

/// Largest step distance a trajectory may contain before it is treated as a
/// jump: the distance covered in one frame at `max_speed_kmh`, padded by
/// `tolerance`.
pub fn jump_threshold(t: &FilterThresholds) -> f64 {
    t.max_speed_kmh * 1_000.0 / (3_600.0 * t.fps) * t.tolerance
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Flag any adjacent-point distance strictly above [`jump_threshold`].
pub fn detect_jump(points: &[[f64; 3]], t: &FilterThresholds) -> Result<TrajectoryVerdict> {
    if points.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: points.len() });
    }
    let max_step = points
        .windows(2)
        .map(|w| dist(&w[0], &w[1]))
        .fold(0.0f64, f64::max);
    if max_step > jump_threshold(t) {
        Ok(TrajectoryVerdict { valid: false, reason: VerdictReason::Jump, metric: max_step })
    } else {
        Ok(ok(max_step))
    }
}

/// Flag trajectories whose residual against their own smoothed version has
/// variance strictly above the threshold — the signature of alternating
/// half-frame-rate position noise.
///
/// Residuals are taken where a full centered window exists; the two-sided
/// average has no lag there, so smooth motion (straight lines, gentle arcs)
/// scores near zero regardless of speed, while endpoint lag never counts
/// against a trajectory.
pub fn detect_vibration(points: &[[f64; 3]], t: &FilterThresholds) -> Result<TrajectoryVerdict> {
    debug_assert!(t.moving_average_window % 2 == 1);
    if points.len() < t.moving_average_window {
        return Err(Error::TooShort { needed: t.moving_average_window, got: points.len() });
    }
    let half = t.moving_average_window / 2;
    let w = t.moving_average_window as f64;
    let interior = half..points.len() - half;
    let n = interior.len() as f64;
    let mut variance = 0.0;
    for axis in 0..3 {
        let residuals = interior.clone().map(|i| {
            let window_sum: f64 = points[i - half..=i + half].iter().map(|p| p[axis]).sum();
            points[i][axis] - window_sum / w
        });
        let mean: f64 = residuals.clone().sum::<f64>() / n;
        variance += residuals.map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    }
    if variance > t.vibration_variance_threshold {
        Ok(TrajectoryVerdict { valid: false, reason: VerdictReason::Vibration, metric: variance })
    } else {
        Ok(ok(variance))
    }
}

/// One verdict per trajectory: the jump check runs first, then vibration.
/// Trajectories too short for a check pass it vacuously.
pub fn filter_recording(trajs: &[EgoTrajectory], t: &FilterThresholds) -> Vec<TrajectoryVerdict> {
    trajs
        .iter()
        .map(|traj| {
            let points = &traj.points;
            match detect_jump(points, t) {
                Ok(v) if !v.valid => return v,
                Ok(_) => {}
                Err(_) => return ok(0.0),
            }
            detect_vibration(points, t).unwrap_or_else(|_| ok(0.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn straight(n: usize, step: f64) -> Vec<[f64; 3]> {
        (0..n).map(|i| [i as f64 * step, 0.0, 0.0]).collect()
    }

    fn zigzag(n: usize, step: f64, amp: f64) -> Vec<[f64; 3]> {
        (0..n)
            .map(|i| [i as f64 * step, if i % 2 == 0 { amp } else { -amp }, 0.0])
            .collect()
    }

    #[test]
    fn threshold_arithmetic() {
        let t = FilterThresholds::default();
        assert!((jump_threshold(&t) - 1.5972222222222223).abs() < 1e-12);
        let unit = FilterThresholds { tolerance: 1.0, ..t.clone() };
        assert!((jump_threshold(&unit) - 1.3888888888888888).abs() < 1e-12);
        let slow_cam = FilterThresholds { fps: 10.0, ..t };
        assert!((jump_threshold(&slow_cam) - 3.194444444444444).abs() < 1e-9);
    }

    #[test]
    fn jump_detection_and_boundary() {
        let t = FilterThresholds::default();
        let clean = straight(60, 1.0);
        let v = detect_jump(&clean, &t).unwrap();
        assert!(v.valid);
        assert!((v.metric - 1.0).abs() < 1e-12);

        let mut broken = clean.clone();
        for p in &mut broken[30..] {
            p[0] += 4.0; // one 5 m step, rest unchanged
        }
        let v = detect_jump(&broken, &t).unwrap();
        assert_eq!(v.reason, VerdictReason::Jump);
        assert!(!v.valid);
        assert!((v.metric - 5.0).abs() < 1e-12);

        // Steps exactly at the threshold pass: the comparison is strict.
        // (Three points keep both step differences bit-exact.)
        let thr = jump_threshold(&t);
        let at = vec![[0.0; 3], [thr, 0.0, 0.0], [2.0 * thr, 0.0, 0.0]];
        assert!(detect_jump(&at, &t).unwrap().valid);

        assert!(matches!(
            detect_jump(&straight(1, 1.0), &t),
            Err(Error::TooShort { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn vibration_detection_closed_form() {
        let t = FilterThresholds::default();
        let v = detect_vibration(&straight(60, 1.0), &t).unwrap();
        assert!(v.valid);
        assert_eq!(v.metric, 0.0);

        // Alternating lateral ±a: interior residual is 4a/3, so the variance
        // is far over threshold at a = 0.2 (and still at a = 0.1).
        for amp in [0.2, 0.1] {
            let v = detect_vibration(&zigzag(60, 0.5, amp), &t).unwrap();
            assert_eq!(v.reason, VerdictReason::Vibration, "amp {amp}");
            let interior = 4.0 * amp / 3.0;
            assert!(v.metric > 0.8 * interior * interior, "metric {}", v.metric);
        }

        assert!(matches!(
            detect_vibration(&straight(2, 1.0), &t),
            Err(Error::TooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn gentle_arc_is_not_vibration() {
        let t = FilterThresholds::default();
        let radius = 100.0;
        let arc: Vec<[f64; 3]> = (0..100)
            .map(|i| {
                let theta = i as f64 * 1.0 / radius; // 1 m steps
                [radius * theta.sin(), radius * (1.0 - theta.cos()), 0.0]
            })
            .collect();
        let v = detect_vibration(&arc, &t).unwrap();
        assert!(v.valid, "arc variance {}", v.metric);
        assert!(detect_jump(&arc, &t).unwrap().valid);
    }

    #[test]
    fn verdicts_are_rigid_invariant_and_scale_predictably() {
        let t = FilterThresholds::default();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let noisy: Vec<[f64; 3]> = (0..60)
            .map(|i| {
                [
                    i as f64 * 0.9 + rng.random_range(-0.02..0.02),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.01..0.01),
                ]
            })
            .collect();

        let (s, c) = 0.7f64.sin_cos();
        let moved: Vec<[f64; 3]> = noisy
            .iter()
            .map(|p| [c * p[0] - s * p[1] + 100.0, s * p[0] + c * p[1] - 40.0, p[2] + 3.0])
            .collect();
        let a = detect_jump(&noisy, &t).unwrap();
        let b = detect_jump(&moved, &t).unwrap();
        assert!((a.metric - b.metric).abs() < 1e-9);
        let a = detect_vibration(&noisy, &t).unwrap();
        let b = detect_vibration(&moved, &t).unwrap();
        assert!((a.metric - b.metric).abs() < 1e-12);

        // Scaling by s multiplies steps by s and variances by s².
        let scaled: Vec<[f64; 3]> = noisy.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect();
        let j = detect_jump(&scaled, &t).unwrap();
        assert!((j.metric - 2.0 * detect_jump(&noisy, &t).unwrap().metric).abs() < 1e-9);
        let v = detect_vibration(&scaled, &t).unwrap();
        assert!((v.metric - 4.0 * a.metric).abs() < 1e-12);
    }

    #[test]
    fn bigger_displacement_never_unflags() {
        let t = FilterThresholds::default();
        let mut pts = straight(60, 1.0);
        pts[30][0] += 2.0;
        let base = detect_jump(&pts, &t).unwrap();
        assert!(!base.valid);
        for extra in [1.0, 5.0, 50.0] {
            let mut worse = pts.clone();
            worse[30][0] += extra;
            let v = detect_jump(&worse, &t).unwrap();
            assert!(!v.valid);
            assert!(v.metric >= base.metric);
        }
    }

    #[test]
    fn recording_filter_orders_checks_and_tolerates_stubs() {
        let t = FilterThresholds::default();
        // A trajectory that both jumps and vibrates reports the jump.
        let mut both = zigzag(60, 0.5, 0.2);
        both[40][0] += 10.0;
        let trajs = vec![
            EgoTrajectory::new(straight(60, 1.0)),
            EgoTrajectory::new(both),
            EgoTrajectory::new(zigzag(60, 0.5, 0.2)),
            EgoTrajectory::new(vec![]),
            EgoTrajectory::new(vec![[0.0; 3]]),
        ];
        let verdicts = filter_recording(&trajs, &t);
        assert_eq!(verdicts.len(), 5);
        assert!(verdicts[0].valid);
        assert_eq!(verdicts[1].reason, VerdictReason::Jump);
        assert_eq!(verdicts[2].reason, VerdictReason::Vibration);
        assert!(verdicts[3].valid && verdicts[4].valid);
    }
}
