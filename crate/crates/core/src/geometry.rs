//! Pose canonicalization: ground-plane estimation, gravity alignment,
//! per-frame facing alignment and torso-length normalization.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, Vector3};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::skeleton::{Frame3, Landmarks, Point3, PoseSequence3D};

/// Torso chain length (mid-hip to chest plus chest to neck) after normalization.
pub const TORSO_LENGTH: f64 = 0.4;
/// Hips closer than this in the xy-plane carry no facing information.
pub const FACING_EPS: f64 = 1e-6;

/// Points `x` with `normal · x = offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: [f64; 3], offset: f64) -> Result<Self> {
        let n = Vector3::from(normal);
        let norm = n.norm();
        if !(norm.is_finite() && norm > 1e-12) || !offset.is_finite() {
            return Err(Error::Validation("plane normal must be finite and nonzero".into()));
        }
        Ok(Plane {
            normal: (n / norm).into(),
            offset: offset / norm,
        })
    }

    pub fn ground() -> Self {
        Plane {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        }
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        Vector3::from(self.normal).dot(&Vector3::from(*p)) - self.offset
    }

    /// Angle between the two normals, in radians.
    pub fn angle_to(&self, other: &Plane) -> f64 {
        let c = Vector3::from(self.normal).dot(&Vector3::from(other.normal));
        c.clamp(-1.0, 1.0).acos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Meters.
    pub inlier_threshold: f64,
    /// Minimum fraction of contact candidates a plane must explain.
    pub contact_fraction: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 1000,
            inlier_threshold: 0.02,
            contact_fraction: 0.5,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Config("inlier threshold must be positive".into()));
        }
        if !(self.contact_fraction > 0.0 && self.contact_fraction <= 1.0) {
            return Err(Error::Config("contact fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A gravity-aligned, facing-aligned, scale-normalized pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPose {
    pub coords: Frame3,
    /// The z-rotation applied by facing alignment, in (-pi, pi].
    pub facing_angle: f64,
}

impl CanonicalPose {
    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    /// Checks centering, torso length and hip orientation.
    pub fn check(&self, lm: Landmarks) -> Result<()> {
        let c = &self.coords;
        let mid = mid_hip(c, lm);
        if mid.norm() > 1e-9 {
            return Err(Error::Validation(format!("mid-hip at {mid:?}, not the origin")));
        }
        let torso = torso_length(c, lm);
        if (torso - TORSO_LENGTH).abs() > 1e-9 {
            return Err(Error::Validation(format!("torso length {torso}")));
        }
        let lh = c[lm.left_hip];
        if lh[1].abs() > 1e-9 || lh[0] < 0.0 {
            return Err(Error::Validation(format!("left hip at {lh:?}, not on +x")));
        }
        if !(self.facing_angle > -PI && self.facing_angle <= PI) {
            return Err(Error::Validation(format!("facing angle {}", self.facing_angle)));
        }
        Ok(())
    }
}

fn v(p: &Point3) -> Vector3<f64> {
    Vector3::from(*p)
}

fn mid_hip(frame: &[Point3], lm: Landmarks) -> Vector3<f64> {
    (v(&frame[lm.left_hip]) + v(&frame[lm.right_hip])) * 0.5
}

fn torso_length(frame: &[Point3], lm: Landmarks) -> f64 {
    let mid = mid_hip(frame, lm);
    let chest = v(&frame[lm.chest]);
    let neck = v(&frame[lm.neck]);
    (chest - mid).norm() + (neck - chest).norm()
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    if x <= -PI {
        x += TAU;
    }
    x
}

/// Lowest (minimum z) joint of every frame.
pub fn lowest_points(seq: &PoseSequence3D) -> Vec<Point3> {
    seq.frames
        .iter()
        .map(|f| {
            *f.iter()
                .min_by(|a, b| a[2].total_cmp(&b[2]))
                .expect("frames are nonempty")
        })
        .collect()
}

/// Estimates the rink plane from per-frame contact candidates.
pub fn fit_ground_plane(seq: &PoseSequence3D, cfg: &RansacConfig) -> Result<Plane> {
    if seq.frames.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "plane fitting needs at least 3 frames, got {}",
            seq.frames.len()
        )));
    }
    let candidates = lowest_points(seq);
    let all: Vec<Point3> = seq.frames.iter().flatten().copied().collect();
    fit_plane_ransac(&candidates, &all, cfg)
}

/// RANSAC over 3-point samples of `candidates`, least-squares refit on the
/// best consensus set. The normal is oriented so most of `reference` lies on
/// its positive side.
pub fn fit_plane_ransac(
    candidates: &[Point3],
    reference: &[Point3],
    cfg: &RansacConfig,
) -> Result<Plane> {
    cfg.validate()?;
    let n = candidates.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 candidate points, got {n}"
        )));
    }
    let pts: Vec<Vector3<f64>> = candidates.iter().map(v).collect();
    let scale = pts
        .iter()
        .map(|p| p.norm())
        .fold(1.0_f64, f64::max);
    let mut rng = rng::seeded(cfg.seed);
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, n, 3);
        let (a, b, c) = (pts[idx.index(0)], pts[idx.index(1)], pts[idx.index(2)]);
        let cross = (b - a).cross(&(c - a));
        let norm = cross.norm();
        if norm <= 1e-12 * scale * scale {
            continue;
        }
        let normal = cross / norm;
        let offset = normal.dot(&a);
        let count = pts
            .iter()
            .filter(|p| (normal.dot(p) - offset).abs() <= cfg.inlier_threshold)
            .count();
        if best.is_none_or(|(c0, _, _)| count > c0) {
            best = Some((count, normal, offset));
        }
    }
    let (count, normal, offset) = best.ok_or_else(|| {
        Error::FitFailure(format!("all {} samples were collinear", cfg.iterations))
    })?;
    let needed = (cfg.contact_fraction * n as f64).ceil() as usize;
    if count < needed {
        return Err(Error::FitFailure(format!(
            "best plane explains {count} of {n} contact candidates, need {needed}"
        )));
    }
    let inliers: Vec<Vector3<f64>> = pts
        .iter()
        .filter(|p| (normal.dot(p) - offset).abs() <= cfg.inlier_threshold)
        .copied()
        .collect();
    let (mut normal, mut offset) = refit(&inliers).unwrap_or((normal, offset));
    let (mut above, mut below) = (0usize, 0usize);
    for p in reference {
        let d = normal.dot(&v(p)) - offset;
        if d > 0.0 {
            above += 1;
        } else if d < 0.0 {
            below += 1;
        }
    }
    if below > above {
        normal = -normal;
        offset = -offset;
    }
    Ok(Plane {
        normal: normal.into(),
        offset,
    })
}

/// Total least squares plane through `pts`.
fn refit(pts: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if pts.len() < 3 {
        return None;
    }
    let centroid = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p) / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let sorted = {
        let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    };
    // Collinear inliers leave the normal undetermined.
    if sorted[1] <= 1e-18 * sorted[2].max(1e-300) {
        return None;
    }
    let normal = eig.eigenvectors.column(imin).into_owned().normalize();
    Some((normal, normal.dot(&centroid)))
}

/// The minimal rotation taking `normal` to +z. An antiparallel normal turns
/// 180 degrees about the x-axis.
pub fn gravity_rotation(normal: &[f64; 3]) -> Rotation3<f64> {
    let n = Vector3::from(*normal).normalize();
    let z = Vector3::z();
    Rotation3::rotation_between(&n, &z).unwrap_or_else(|| {
        Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::x()), PI)
    })
}

/// Rotates the sequence so `plane` becomes the z = 0 plane.
pub fn align_to_gravity(seq: &PoseSequence3D, plane: &Plane) -> PoseSequence3D {
    let rot = gravity_rotation(&plane.normal);
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|p| {
                    let mut q = rot * v(p);
                    q.z -= plane.offset;
                    q.into()
                })
                .collect()
        })
        .collect();
    PoseSequence3D {
        frames,
        ..seq.clone()
    }
}

fn rotate_about_z(frame: &[Point3], center: (f64, f64), angle: f64) -> Frame3 {
    let (s, c) = angle.sin_cos();
    frame
        .iter()
        .map(|p| {
            let x = p[0] - center.0;
            let y = p[1] - center.1;
            [c * x - s * y, s * x + c * y, p[2]]
        })
        .collect()
}

/// Rotates about z, around the hip midpoint moved to the xy origin, so the
/// left hip lies on +x. Returns the applied rotation angle.
pub fn align_facing(frame: &[Point3], lm: Landmarks) -> Result<(Frame3, f64)> {
    let l = frame[lm.left_hip];
    let r = frame[lm.right_hip];
    let (dx, dy) = (l[0] - r[0], l[1] - r[1]);
    if dx.hypot(dy) < FACING_EPS {
        return Err(Error::DegenerateFacing);
    }
    let angle = wrap_angle(-dy.atan2(dx));
    let center = (0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1]));
    Ok((rotate_about_z(frame, center, angle), angle))
}

/// Centers at the mid-hip and scales the torso chain to [`TORSO_LENGTH`].
pub fn normalize_pose(frame: &[Point3], lm: Landmarks) -> Result<Frame3> {
    let torso = torso_length(frame, lm);
    if !(torso > 1e-9) {
        return Err(Error::Normalization(format!(
            "torso length {torso} is too small to normalize"
        )));
    }
    let mid = mid_hip(frame, lm);
    let s = TORSO_LENGTH / torso;
    Ok(frame.iter().map(|p| ((v(p) - mid) * s).into()).collect())
}

/// Plane fit, gravity alignment, then per-frame facing alignment and
/// normalization. Frames with coincident hips reuse the previous angle.
pub fn canonicalize_sequence(
    seq: &PoseSequence3D,
    cfg: &RansacConfig,
) -> Result<Vec<CanonicalPose>> {
    seq.validate()?;
    let plane = fit_ground_plane(seq, cfg)?;
    let aligned = align_to_gravity(seq, &plane);
    canonicalize_aligned(&aligned)
}

/// Facing alignment and normalization of an already gravity-aligned sequence.
pub fn canonicalize_aligned(aligned: &PoseSequence3D) -> Result<Vec<CanonicalPose>> {
    let lm = aligned.skeleton.landmarks();
    let mut prev: Option<f64> = None;
    let mut out = Vec::with_capacity(aligned.frames.len());
    for (t, f) in aligned.frames.iter().enumerate() {
        let (faced, angle) = match align_facing(f, lm) {
            Ok(r) => r,
            Err(Error::DegenerateFacing) => {
                let angle = prev.ok_or(Error::DegenerateFacing)?;
                log::debug!("frame {t}: degenerate facing, reusing angle {angle}");
                let c = mid_hip(f, lm);
                (rotate_about_z(f, (c.x, c.y), angle), angle)
            }
            Err(e) => return Err(e),
        };
        prev = Some(angle);
        out.push(CanonicalPose {
            coords: normalize_pose(&faced, lm)?,
            facing_angle: angle,
        });
    }
    Ok(out)
}

/// Flattened coordinates followed by `(cos, sin)` of the facing angle.
pub fn pose3d_feature_vector(canon: &CanonicalPose) -> Vec<f64> {
    let mut out: Vec<f64> = canon.coords.iter().flatten().copied().collect();
    out.push(canon.facing_angle.cos());
    out.push(canon.facing_angle.sin());
    out
}

/// Unwraps an angle sequence so consecutive differences lie in (-pi, pi].
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    for (i, &a) in angles.iter().enumerate() {
        if i == 0 {
            out.push(a);
        } else {
            let prev: f64 = out[i - 1];
            out.push(prev + wrap_angle(a - prev));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{joint, Skeleton};
    use approx::assert_abs_diff_eq;

    fn lm() -> Landmarks {
        Skeleton::canonical().landmarks()
    }

    fn upright() -> Frame3 {
        let mut f = vec![[0.0; 3]; 17];
        f[joint::PELVIS] = [0.0, 0.0, 1.0];
        f[joint::LEFT_HIP] = [0.1, 0.0, 1.0];
        f[joint::RIGHT_HIP] = [-0.1, 0.0, 1.0];
        f[joint::LEFT_KNEE] = [0.1, 0.02, 0.55];
        f[joint::RIGHT_KNEE] = [-0.1, 0.02, 0.55];
        f[joint::LEFT_ANKLE] = [0.1, 0.0, 0.1];
        f[joint::RIGHT_ANKLE] = [-0.1, 0.0, 0.1];
        f[joint::CHEST] = [0.0, 0.0, 1.3];
        f[joint::NECK] = [0.0, 0.0, 1.5];
        f[joint::NOSE] = [0.0, 0.1, 1.6];
        f[joint::HEAD] = [0.0, 0.0, 1.7];
        f[joint::LEFT_SHOULDER] = [0.2, 0.0, 1.45];
        f[joint::LEFT_ELBOW] = [0.25, 0.0, 1.2];
        f[joint::LEFT_WRIST] = [0.3, 0.05, 1.0];
        f[joint::RIGHT_SHOULDER] = [-0.2, 0.0, 1.45];
        f[joint::RIGHT_ELBOW] = [-0.25, 0.0, 1.2];
        f[joint::RIGHT_WRIST] = [-0.3, 0.05, 1.0];
        f
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn facing_identity_case() {
        let (out, angle) = align_facing(&upright(), lm()).unwrap();
        assert_eq!(angle, 0.0);
        for (a, b) in out.iter().zip(upright().iter()) {
            for k in 0..3 {
                assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn facing_quarter_turn() {
        let mut f = upright();
        f[joint::LEFT_HIP] = [0.0, 0.1, 0.0];
        f[joint::RIGHT_HIP] = [0.0, -0.1, 0.0];
        let (out, angle) = align_facing(&f, lm()).unwrap();
        assert_abs_diff_eq!(angle, -PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[joint::LEFT_HIP][0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(out[joint::LEFT_HIP][1], 0.0, epsilon = 1e-15);
        for (a, b) in out.iter().zip(f.iter()) {
            assert_eq!(a[2], b[2]);
        }
    }

    #[test]
    fn facing_is_idempotent() {
        let mut f = upright();
        f = rotate_about_z(&f, (0.3, -0.2), 2.1);
        let (once, a1) = align_facing(&f, lm()).unwrap();
        let (twice, a2) = align_facing(&once, lm()).unwrap();
        assert!(a1.abs() > 0.1);
        assert_abs_diff_eq!(a2, 0.0, epsilon = 1e-12);
        for (a, b) in once.iter().zip(twice.iter()) {
            for k in 0..3 {
                assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn facing_degenerate_hips() {
        let mut f = upright();
        f[joint::LEFT_HIP] = [0.0, 0.0, 1.0];
        f[joint::RIGHT_HIP] = [0.0, 0.0, 0.9];
        assert!(matches!(align_facing(&f, lm()), Err(Error::DegenerateFacing)));
    }

    #[test]
    fn normalize_halves_coordinates() {
        // Mid-hip at (1,2,3); chest 0.5 above, neck 0.3 above chest: torso 0.8.
        let mut f = vec![[1.0, 2.0, 3.0]; 17];
        f[joint::LEFT_HIP] = [1.1, 2.0, 3.0];
        f[joint::RIGHT_HIP] = [0.9, 2.0, 3.0];
        f[joint::CHEST] = [1.0, 2.0, 3.5];
        f[joint::NECK] = [1.0, 2.0, 3.8];
        f[joint::HEAD] = [1.2, 1.6, 4.0];
        let out = normalize_pose(&f, lm()).unwrap();
        assert_abs_diff_eq!(out[joint::PELVIS][0], 0.0, epsilon = 1e-15);
        let expected_head = [0.1, -0.2, 0.5];
        for k in 0..3 {
            assert_abs_diff_eq!(out[joint::HEAD][k], expected_head[k], epsilon = 1e-12);
            assert_abs_diff_eq!(out[joint::CHEST][k], [0.0, 0.0, 0.25][k], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(torso_length(&out, lm()), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn normalize_is_idempotent_and_scale_invariant() {
        let f = upright();
        let once = normalize_pose(&f, lm()).unwrap();
        let twice = normalize_pose(&once, lm()).unwrap();
        let scaled: Frame3 = f.iter().map(|p| [p[0] * 3.7, p[1] * 3.7, p[2] * 3.7]).collect();
        let from_scaled = normalize_pose(&scaled, lm()).unwrap();
        for j in 0..17 {
            for k in 0..3 {
                assert_abs_diff_eq!(once[j][k], twice[j][k], epsilon = 1e-12);
                assert_abs_diff_eq!(once[j][k], from_scaled[j][k], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn normalize_rejects_zero_torso() {
        let f = vec![[0.5, 0.5, 0.5]; 17];
        assert!(matches!(normalize_pose(&f, lm()), Err(Error::Normalization(_))));
    }

    #[test]
    fn gravity_identity_and_antiparallel() {
        let seq = PoseSequence3D::new(Skeleton::canonical(), vec![upright(); 3], 30.0, "s", "t")
            .unwrap();
        let out = align_to_gravity(&seq, &Plane::ground());
        assert_eq!(out, seq);
        let flipped = Plane {
            normal: [0.0, 0.0, -1.0],
            offset: 0.0,
        };
        let out = align_to_gravity(&seq, &flipped);
        // 180 degrees about x: (x, y, z) -> (x, -y, -z).
        assert_abs_diff_eq!(out.frames[0][joint::HEAD][2], -1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(out.frames[0][joint::NOSE][1], -0.1, epsilon = 1e-12);
    }

    #[test]
    fn feature_vector_layout() {
        let c = CanonicalPose {
            coords: vec![[0.0; 3]; 17],
            facing_angle: PI / 2.0,
        };
        let f = pose3d_feature_vector(&c);
        assert_eq!(f.len(), 53);
        assert_abs_diff_eq!(f[51], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[52], 1.0, epsilon = 1e-12);
        let c0 = CanonicalPose {
            facing_angle: 0.0,
            ..c
        };
        let f0 = pose3d_feature_vector(&c0);
        assert_eq!(&f0[51..], &[1.0, 0.0]);
    }

    #[test]
    fn too_few_frames_for_plane() {
        let seq = PoseSequence3D::new(Skeleton::canonical(), vec![upright(); 2], 30.0, "s", "t")
            .unwrap();
        assert!(matches!(
            fit_ground_plane(&seq, &RansacConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn collinear_candidates_fail() {
        let pts: Vec<Point3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let cfg = RansacConfig {
            iterations: 20,
            ..Default::default()
        };
        assert!(matches!(
            fit_plane_ransac(&pts, &pts, &cfg),
            Err(Error::FitFailure(_))
        ));
    }
}
