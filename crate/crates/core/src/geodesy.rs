//! Reference-frame math shared by the whole pipeline.
//!
//! Frames in play:
//! - ECEF: earth-centered earth-fixed, meters.
//! - Geodetic: WGS-84 latitude/longitude (radians) and ellipsoidal altitude.
//! - NED: local tangent plane at a reference point, x north, y east, z down.
//! - Body: vehicle-fixed aerospace frame, x forward, y right, z down.
//! - Ego: vehicle-fixed dataset frame, x forward, y left, z up.
//!
//! Body and ego share the x axis; y and z are negated between them.
//! Euler angles are always (roll, pitch, yaw) applied in yaw-pitch-roll
//! order, so the NED-to-body coordinate transform is Rx(roll)*Ry(pitch)*Rz(yaw).

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS-84 semi-major axis, meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Geodetic coordinates: latitude and longitude in radians, altitude in
/// meters above the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodetic {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

/// Prime-vertical radius of curvature at latitude `lat`.
fn prime_vertical_radius(lat: f64) -> f64 {
    WGS84_A / (1.0 - WGS84_E2 * lat.sin() * lat.sin()).sqrt()
}

/// Geodetic to ECEF, exact closed form.
pub fn ecef_from_geodetic(g: Geodetic) -> Vector3<f64> {
    let n = prime_vertical_radius(g.lat);
    let (slat, clat) = g.lat.sin_cos();
    let (slon, clon) = g.lon.sin_cos();
    Vector3::new(
        (n + g.alt) * clat * clon,
        (n + g.alt) * clat * slon,
        (n * (1.0 - WGS84_E2) + g.alt) * slat,
    )
}

/// ECEF to geodetic by fixed-point iteration on latitude.
///
/// Converges to machine precision in a handful of iterations everywhere a
/// road vehicle can be; the loop is capped defensively.
pub fn geodetic_from_ecef(p: Vector3<f64>) -> Geodetic {
    let lon = p.y.atan2(p.x);
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    for _ in 0..20 {
        let n = prime_vertical_radius(lat);
        let next = (p.z + WGS84_E2 * n * lat.sin()).atan2(rho);
        if (next - lat).abs() < 1e-15 {
            lat = next;
            break;
        }
        lat = next;
    }
    let n = prime_vertical_radius(lat);
    let alt = if lat.cos().abs() > 1e-2 {
        rho / lat.cos() - n
    } else {
        p.z / lat.sin() - n * (1.0 - WGS84_E2)
    };
    Geodetic { lat, lon, alt }
}

/// Coordinate-transform matrix from ECEF to NED at the given latitude and
/// longitude: `v_ned = ned_rotation(lat, lon) * v_ecef`.
pub fn ned_rotation(lat: f64, lon: f64) -> Matrix3<f64> {
    let (slat, clat) = lat.sin_cos();
    let (slon, clon) = lon.sin_cos();
    Matrix3::new(
        -slat * clon, -slat * slon, clat, //
        -slon, clon, 0.0, //
        -clat * clon, -clat * slon, -slat,
    )
}

/// Coordinate-transform matrix from NED to body for Euler angles
/// (roll, pitch, yaw): `v_body = R * v_ned`.
pub fn body_rotation(rpy: Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = rpy.x.sin_cos();
    let (sp, cp) = rpy.y.sin_cos();
    let (sy, cy) = rpy.z.sin_cos();
    Matrix3::new(
        cp * cy,
        cp * sy,
        -sp,
        sr * sp * cy - cr * sy,
        sr * sp * sy + cr * cy,
        sr * cp,
        cr * sp * cy + sr * sy,
        cr * sp * sy - sr * cy,
        cr * cp,
    )
}

/// Euler angles (roll, pitch, yaw) of a NED-to-body coordinate transform.
/// Inverse of [`body_rotation`] away from the pitch singularity.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-r[(0, 2)]).clamp(-1.0, 1.0).asin();
    let roll = r[(1, 2)].atan2(r[(2, 2)]);
    let yaw = r[(0, 1)].atan2(r[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

/// Body (x fwd, y right, z down) to ego (x fwd, y left, z up) and back.
/// The map is its own inverse.
pub fn body_to_ego(v: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, -v.y, -v.z)
}

/// Express an ECEF point in the NED tangent frame anchored at `origin`,
/// returning (north, east, down) meters.
pub fn ecef_to_ned(p: Vector3<f64>, origin: Vector3<f64>) -> Result<Vector3<f64>> {
    let norm = origin.norm();
    if norm < 1e6 {
        return Err(Error::DegenerateOrigin { norm });
    }
    let g = geodetic_from_ecef(origin);
    Ok(ned_rotation(g.lat, g.lon) * (p - origin))
}

/// Inverse of [`ecef_to_ned`].
pub fn ned_to_ecef(ned: Vector3<f64>, origin: Vector3<f64>) -> Result<Vector3<f64>> {
    let norm = origin.norm();
    if norm < 1e6 {
        return Err(Error::DegenerateOrigin { norm });
    }
    let g = geodetic_from_ecef(origin);
    Ok(origin + ned_rotation(g.lat, g.lon).transpose() * ned)
}

/// Fused vehicle state at one camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position_ecef: Vector3<f64>,
    pub velocity_ecef: Vector3<f64>,
    /// (roll, pitch, yaw), radians.
    pub orientation_ned: Vector3<f64>,
    /// Epoch milliseconds.
    pub timestamp: i64,
}

impl Pose {
    /// ECEF-to-ego rotation anchored at this pose. Building it involves an
    /// iterative geodetic solve, so callers transforming many points against
    /// one pose should hoist it rather than call the per-point methods.
    pub fn ego_rotation(&self) -> Matrix3<f64> {
        let g = geodetic_from_ecef(self.position_ecef);
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        flip * body_rotation(self.orientation_ned) * ned_rotation(g.lat, g.lon)
    }

    /// Express an ECEF point in this pose's ego frame.
    pub fn world_to_ego(&self, p_ecef: Vector3<f64>) -> Vector3<f64> {
        self.ego_rotation() * (p_ecef - self.position_ecef)
    }

    /// Express an ego-frame point in ECEF.
    pub fn ego_to_world(&self, p_ego: Vector3<f64>) -> Vector3<f64> {
        self.position_ecef + self.ego_rotation().transpose() * p_ego
    }

    /// Rotate an ego-frame vector (no translation) into ECEF.
    pub fn ego_vector_to_world(&self, v_ego: Vector3<f64>) -> Vector3<f64> {
        self.ego_rotation().transpose() * v_ego
    }

    /// Rotate an ECEF vector (no translation) into the ego frame.
    pub fn world_vector_to_ego(&self, v_ecef: Vector3<f64>) -> Vector3<f64> {
        self.ego_rotation() * v_ecef
    }
}

/// Pinhole camera mounted on the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    /// Row-major K: \[fx 0 cx; 0 fy cy; 0 0 1\].
    pub intrinsic: Matrix3<f64>,
    /// Homogeneous ego-to-camera transform; camera x right, y down, z forward.
    pub extrinsic: Matrix4<f64>,
}

impl CameraModel {
    /// Points closer than this along the optical axis are not projected.
    pub const MIN_DEPTH_M: f64 = 0.1;

    pub fn from_rows(intrinsic: [[f64; 3]; 3], extrinsic: [[f64; 4]; 4]) -> Self {
        CameraModel {
            intrinsic: Matrix3::from_fn(|r, c| intrinsic[r][c]),
            extrinsic: Matrix4::from_fn(|r, c| extrinsic[r][c]),
        }
    }

    pub fn intrinsic_rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.intrinsic[(r, c)]))
    }

    pub fn extrinsic_rows(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.extrinsic[(r, c)]))
    }

    /// Positive focal lengths and an orthonormal extrinsic rotation block.
    pub fn validate(&self) -> Result<()> {
        if self.intrinsic[(0, 0)] <= 0.0 || self.intrinsic[(1, 1)] <= 0.0 {
            return Err(Error::Config("camera focal lengths must be positive".into()));
        }
        let r = self.extrinsic.fixed_view::<3, 3>(0, 0);
        let gram_err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if gram_err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "camera extrinsic block is not a proper rotation".into(),
            ));
        }
        Ok(())
    }

    /// Front camera with the production intrinsics and an ideal forward
    /// mount 1.22 m above the ego origin.
    pub fn default_front() -> Self {
        CameraModel {
            intrinsic: Matrix3::new(2648.0, 0.0, 964.0, 0.0, 2648.0, 604.0, 0.0, 0.0, 1.0),
            extrinsic: Matrix4::new(
                0.0, -1.0, 0.0, 0.0, //
                0.0, 0.0, -1.0, 1.22, //
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ),
        }
    }

    /// Project an ego-frame point to pixel coordinates. Returns `None` for
    /// points at or behind the minimum depth. Out-of-bounds pixels are
    /// returned as-is; callers decide whether to clip.
    pub fn project(&self, p_ego: Vector3<f64>) -> Option<(f64, f64)> {
        let pc = self.extrinsic * Vector4::new(p_ego.x, p_ego.y, p_ego.z, 1.0);
        if pc.z <= Self::MIN_DEPTH_M {
            return None;
        }
        let u = self.intrinsic[(0, 0)] * pc.x / pc.z + self.intrinsic[(0, 2)];
        let v = self.intrinsic[(1, 1)] * pc.y / pc.z + self.intrinsic[(1, 2)];
        Some((u, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn pose_at(g: Geodetic, rpy: Vector3<f64>) -> Pose {
        Pose {
            position_ecef: ecef_from_geodetic(g),
            velocity_ecef: Vector3::zeros(),
            orientation_ned: rpy,
            timestamp: 0,
        }
    }

    #[test]
    fn ecef_geodetic_round_trip() {
        let cases = [
            Geodetic { lat: deg(35.36), lon: deg(139.35), alt: 35.2 },
            Geodetic { lat: deg(-33.9), lon: deg(-70.7), alt: 520.0 },
            Geodetic { lat: deg(0.0), lon: deg(0.0), alt: 0.0 },
            Geodetic { lat: deg(67.1), lon: deg(24.9), alt: -12.0 },
            Geodetic { lat: deg(89.0), lon: deg(10.0), alt: 100.0 },
        ];
        for g in cases {
            let back = geodetic_from_ecef(ecef_from_geodetic(g));
            assert_relative_eq!(back.lat, g.lat, epsilon = 1e-12);
            assert_relative_eq!(back.lon, g.lon, epsilon = 1e-12);
            assert!((back.alt - g.alt).abs() < 1e-6, "alt {} vs {}", back.alt, g.alt);
        }
    }

    #[test]
    fn known_ecef_point() {
        // Equator at the prime meridian sits on the semi-major axis.
        let p = ecef_from_geodetic(Geodetic { lat: 0.0, lon: 0.0, alt: 0.0 });
        assert_relative_eq!(p.x, WGS84_A, epsilon = 1e-9);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(p.z, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ned_rotation_is_orthonormal_and_points_north() {
        let r = ned_rotation(deg(35.0), deg(139.0));
        let should_be_eye = r * r.transpose();
        assert_relative_eq!(should_be_eye, Matrix3::identity(), epsilon = 1e-12);

        // At the equator/prime meridian the up direction is +x ECEF, so the
        // NED z axis (down) must map from -x.
        let r0 = ned_rotation(0.0, 0.0);
        let down = r0 * Vector3::new(-1.0, 0.0, 0.0);
        assert_relative_eq!(down, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        // North at that point is +z ECEF.
        let north = r0 * Vector3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(north, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn body_rotation_matches_axis_products() {
        let rx = |t: f64| {
            let (s, c) = t.sin_cos();
            Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
        };
        let ry = |t: f64| {
            let (s, c) = t.sin_cos();
            Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
        };
        let rz = |t: f64| {
            let (s, c) = t.sin_cos();
            Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
        };
        let rpy = Vector3::new(0.1, -0.2, 1.3);
        let expect = rx(rpy.x) * ry(rpy.y) * rz(rpy.z);
        assert_relative_eq!(body_rotation(rpy), expect, epsilon = 1e-14);
    }

    #[test]
    fn euler_round_trip() {
        for &(r, p, y) in &[
            (0.0, 0.0, 0.0),
            (0.01, -0.02, 2.9),
            (-0.3, 0.4, -3.0),
            (1.0, -1.2, 0.5),
        ] {
            let rpy = Vector3::new(r, p, y);
            let back = euler_from_rotation(&body_rotation(rpy));
            assert_relative_eq!(back, rpy, epsilon = 1e-12);
        }
    }

    #[test]
    fn ned_origin_transforms() {
        let origin = ecef_from_geodetic(Geodetic { lat: deg(35.0), lon: deg(139.0), alt: 20.0 });

        // Self-origin maps to zero.
        let zero = ecef_to_ned(origin, origin).unwrap();
        assert!(zero.norm() < 1e-12);

        // Round trip.
        let ned = Vector3::new(120.0, -40.0, 3.0);
        let back = ecef_to_ned(ned_to_ecef(ned, origin).unwrap(), origin).unwrap();
        assert_relative_eq!(back, ned, epsilon = 1e-6);

        // At the equator the geodetic normal is exactly radial, so a point
        // 100 m outward along the radius is 100 m of pure "up" (-down).
        let eq = ecef_from_geodetic(Geodetic { lat: 0.0, lon: deg(139.0), alt: 0.0 });
        let outward = eq * (1.0 + 100.0 / eq.norm());
        let ned_out = ecef_to_ned(outward, eq).unwrap();
        assert!((ned_out.z + 100.0).abs() < 1e-3, "down = {}", ned_out.z);
        assert!(ned_out.xy().norm() < 1e-3);

        // Degenerate origin rejected.
        assert!(matches!(
            ecef_to_ned(origin, Vector3::new(10.0, 0.0, 0.0)),
            Err(Error::DegenerateOrigin { .. })
        ));
    }

    #[test]
    fn yaw_zero_faces_north() {
        // A pose with zero roll/pitch/yaw has its ego x axis pointing north.
        let pose = pose_at(Geodetic { lat: deg(35.0), lon: deg(139.0), alt: 30.0 }, Vector3::zeros());
        let g = geodetic_from_ecef(pose.position_ecef);
        let north_ecef = ned_rotation(g.lat, g.lon).transpose() * Vector3::new(1.0, 0.0, 0.0);
        let fwd = pose.world_vector_to_ego(north_ecef);
        assert_relative_eq!(fwd, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);

        // East lands on ego -y (left-handed against the NED y axis)...
        let east_ecef = ned_rotation(g.lat, g.lon).transpose() * Vector3::new(0.0, 1.0, 0.0);
        let left = pose.world_vector_to_ego(east_ecef);
        assert_relative_eq!(left, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-12);

        // ...and up on ego +z.
        let down_ecef = ned_rotation(g.lat, g.lon).transpose() * Vector3::new(0.0, 0.0, 1.0);
        let up = pose.world_vector_to_ego(down_ecef);
        assert_relative_eq!(up, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);

        // A point 10 m due north lands 10 m ahead.
        let ahead = pose.world_to_ego(pose.position_ecef + 10.0 * north_ecef);
        assert_relative_eq!(ahead, Vector3::new(10.0, 0.0, 0.0), epsilon = 1e-6);
    }

    #[test]
    fn world_to_ego_is_an_isometry() {
        let pose = pose_at(
            Geodetic { lat: deg(35.36), lon: deg(139.35), alt: 35.0 },
            Vector3::new(0.01, -0.02, 2.2),
        );
        // Ego origin maps to (0,0,0).
        assert!(pose.world_to_ego(pose.position_ecef).norm() < 1e-12);
        let a = pose.position_ecef + Vector3::new(3.0, 4.0, 0.0);
        let b = pose.position_ecef + Vector3::new(0.0, 0.0, 5.0);
        let (ea, eb) = (pose.world_to_ego(a), pose.world_to_ego(b));
        let d_world = (a - b).norm();
        let d_ego = (ea - eb).norm();
        assert!((d_world - d_ego).abs() / d_world < 1e-9);
    }

    #[test]
    fn world_ego_round_trip() {
        let pose = pose_at(
            Geodetic { lat: deg(35.36), lon: deg(139.35), alt: 35.0 },
            Vector3::new(0.013, -0.006, -2.99),
        );
        for &p in &[
            Vector3::new(5.0, -2.0, 0.3),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(-100.0, 40.0, -3.0),
        ] {
            let world = pose.ego_to_world(p);
            let back = pose.world_to_ego(world);
            assert_relative_eq!(back, p, epsilon = 1e-9);
        }
    }

    #[test]
    fn ego_points_ahead_move_away_from_earth_center_at_equator_when_pitched_up() {
        // Sanity-check the sign conventions end to end: at the equator with
        // pitch +90 deg (nose up in NED), the ego forward axis is the
        // geodetic up direction, which at the equator is exactly radial.
        let pose = pose_at(
            Geodetic { lat: 0.0, lon: 0.0, alt: 0.0 },
            Vector3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0),
        );
        let ahead = pose.ego_to_world(Vector3::new(10.0, 0.0, 0.0));
        assert!(ahead.norm() > pose.position_ecef.norm() + 9.9);
    }

    #[test]
    fn projection_center_and_depth_cull() {
        let cam = CameraModel::default_front();
        // A point on the optical axis projects to the principal point.
        let (u, v) = cam.project(Vector3::new(10.0, 0.0, 1.22)).unwrap();
        assert_relative_eq!(u, 964.0, epsilon = 1e-9);
        assert_relative_eq!(v, 604.0, epsilon = 1e-9);

        // Left of the vehicle means smaller u; below the camera means larger v.
        let (u_left, _) = cam.project(Vector3::new(10.0, 1.0, 1.22)).unwrap();
        assert!(u_left < 964.0);
        let (_, v_ground) = cam.project(Vector3::new(10.0, 0.0, 0.0)).unwrap();
        assert!(v_ground > 604.0);

        // Behind or grazing the camera: culled.
        assert!(cam.project(Vector3::new(-5.0, 0.0, 1.22)).is_none());
        assert!(cam.project(Vector3::new(0.1, 0.0, 1.22)).is_none());
    }

    #[test]
    fn projection_scale_matches_focal_length() {
        let cam = CameraModel::default_front();
        // Ego (10, -1, 1.22) is camera-frame (1, 0, 10): u = 964 + fx/10.
        let (u, _) = cam.project(Vector3::new(10.0, -1.0, 1.22)).unwrap();
        assert_relative_eq!(u - 964.0, 2648.0 / 10.0, epsilon = 1e-9);
    }

    #[test]
    fn camera_validation_and_row_round_trip() {
        let cam = CameraModel::default_front();
        cam.validate().unwrap();
        let back = CameraModel::from_rows(cam.intrinsic_rows(), cam.extrinsic_rows());
        assert_eq!(back, cam);

        let mut bad = cam.clone();
        bad.extrinsic[(0, 0)] = 2.0;
        assert!(bad.validate().is_err());
    }
}
