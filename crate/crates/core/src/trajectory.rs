//! Per-frame future-trajectory annotation: each frame's next three seconds
//! expressed as up to 60 points in that frame's ego coordinates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geodesy::Pose;
use crate::TRAJECTORY_LEN;

/// A frame's future trajectory in its own ego frame.
///
/// The first point is the frame's own position, exactly (0, 0, 0); the
/// remaining points are the next 59 frame positions. A frame with no
/// successor at all gets an empty trajectory rather than the lone origin
/// point, so a bare `trajectory_count == 0` marks the recording tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoTrajectory {
    pub points: Vec<[f64; 3]>,
    pub trajectory_count: usize,
    /// True when all 60 points are present.
    pub complete: bool,
}

impl EgoTrajectory {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let trajectory_count = points.len();
        EgoTrajectory { points, trajectory_count, complete: trajectory_count == TRAJECTORY_LEN }
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.points[i])
    }
}

/// Annotate every pose with its future trajectory. `poses` must be
/// time-ordered; output length equals input length.
pub fn annotate_future(poses: &[Pose]) -> Vec<EgoTrajectory> {
    (0..poses.len())
        .map(|i| {
            if i + 1 >= poses.len() {
                return EgoTrajectory::new(Vec::new());
            }
            let end = (i + TRAJECTORY_LEN).min(poses.len());
            // One rotation per anchor pose; the per-point transform is then
            // a single matrix-vector product.
            let rot = poses[i].ego_rotation();
            let origin = poses[i].position_ecef;
            let points = poses[i..end]
                .iter()
                .map(|p| {
                    let e = rot * (p.position_ecef - origin);
                    [e.x, e.y, e.z]
                })
                .collect();
            EgoTrajectory::new(points)
        })
        .collect()
}

/// Indices of the 10 evaluation points within a complete 60-point
/// trajectory: 5, 11, ..., 59 (end-inclusive, so the final point sits at the
/// full horizon).
pub const SUBSAMPLE_INDICES: [usize; 10] = [5, 11, 17, 23, 29, 35, 41, 47, 53, 59];

/// The 10 evaluation points of a complete trajectory, or `None` when the
/// trajectory is incomplete.
pub fn subsample(traj: &EgoTrajectory) -> Option<[[f64; 3]; 10]> {
    if !traj.complete {
        return None;
    }
    Some(SUBSAMPLE_INDICES.map(|i| traj.points[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{ecef_from_geodetic, ned_to_ecef, Geodetic};
    use nalgebra::Vector3;

    fn straight_poses(n: usize, v: f64) -> Vec<Pose> {
        let origin = ecef_from_geodetic(Geodetic {
            lat: 35.36f64.to_radians(),
            lon: 139.35f64.to_radians(),
            alt: 35.0,
        });
        // Heading due east: NED yaw = +90 deg.
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.05;
                let ned = Vector3::new(0.0, v * t, 0.0);
                Pose {
                    position_ecef: ned_to_ecef(ned, origin).unwrap(),
                    velocity_ecef: Vector3::zeros(),
                    orientation_ned: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
                    timestamp: (i as i64) * 50,
                }
            })
            .collect()
    }

    #[test]
    fn first_point_is_origin_and_count_matches() {
        let poses = straight_poses(200, 7.43);
        let trajs = annotate_future(&poses);
        assert_eq!(trajs.len(), 200);
        for traj in trajs.iter().take(141) {
            assert!(traj.complete);
            assert_eq!(traj.trajectory_count, 60);
            let first = traj.point(0);
            assert!(first.norm() == 0.0, "first point must be exactly zero, got {first}");
        }
    }

    #[test]
    fn tail_frames_shrink_and_last_is_empty() {
        let poses = straight_poses(100, 10.0);
        let trajs = annotate_future(&poses);
        // Frame 40 is the last with a full 60-point future (self + 59).
        assert!(trajs[40].complete);
        assert!(!trajs[41].complete);
        assert_eq!(trajs[41].trajectory_count, 59);
        assert_eq!(trajs[98].trajectory_count, 2);
        assert_eq!(trajs[99].trajectory_count, 0);
        assert!(!trajs[99].complete);
    }

    #[test]
    fn round_trip_through_ego_to_world() {
        let poses = straight_poses(120, 8.0);
        let trajs = annotate_future(&poses);
        for (i, traj) in trajs.iter().enumerate() {
            for (k, p) in traj.points.iter().enumerate() {
                let world = poses[i].ego_to_world(Vector3::from(*p));
                let err = (world - poses[i + k].position_ecef).norm();
                assert!(err < 1e-6, "frame {i} point {k}: {err}");
            }
        }
    }

    #[test]
    fn straight_motion_advances_along_x() {
        let poses = straight_poses(200, 7.43);
        let trajs = annotate_future(&poses);
        let last = trajs[0].point(59);
        // 59 steps of 50 ms at 7.43 m/s.
        assert!((last.x - 7.43 * 2.95).abs() < 1e-6);
        assert!(last.y.abs() < 1e-6);
    }

    #[test]
    fn stationary_trajectory_is_all_zero() {
        let poses = straight_poses(80, 0.0);
        let trajs = annotate_future(&poses);
        assert!(trajs[0].complete);
        assert!(trajs[0].points.iter().all(|p| Vector3::from(*p).norm() < 1e-12));
    }

    #[test]
    fn subsample_takes_the_pinned_indices() {
        let poses = straight_poses(100, 10.0);
        let trajs = annotate_future(&poses);
        let pts = subsample(&trajs[0]).unwrap();
        assert!((pts[0][0] - 10.0 * 0.25).abs() < 1e-9);
        assert!((pts[9][0] - 10.0 * 2.95).abs() < 1e-9);
        assert!(subsample(&trajs[99]).is_none());
    }
}
