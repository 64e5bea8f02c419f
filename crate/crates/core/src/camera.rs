//! Virtual cameras, perspective projection and the 2D augmentations used to
//! build anchor/positive pairs.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CanonicalPose;
use crate::rng::Rng;
use crate::skeleton::Point3;

pub const MAX_ELEVATION: f64 = PI / 6.0;
pub const MIN_DISTANCE: f64 = 5.0;
pub const MAX_DISTANCE: f64 = 10.0;

/// A camera on a sphere around the origin, looking at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualCamera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl VirtualCamera {
    pub fn new(azimuth: f64, elevation: f64, distance: f64) -> Result<Self> {
        if !(azimuth > -PI && azimuth <= PI) {
            return Err(Error::Validation(format!("azimuth {azimuth} outside (-pi, pi]")));
        }
        if !(elevation.abs() <= MAX_ELEVATION) {
            return Err(Error::Validation(format!("elevation {elevation} outside [-pi/6, pi/6]")));
        }
        if !(MIN_DISTANCE..=MAX_DISTANCE).contains(&distance) {
            return Err(Error::Validation(format!("distance {distance} outside [5, 10]")));
        }
        Ok(VirtualCamera {
            azimuth,
            elevation,
            distance,
        })
    }

    /// Unit vector from the origin toward the camera.
    pub fn direction(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [ce * ca, ce * sa, se]
    }

    pub fn position(&self) -> [f64; 3] {
        let d = self.direction();
        [d[0] * self.distance, d[1] * self.distance, d[2] * self.distance]
    }

    /// Camera basis `(right, up, forward)`; forward points at the origin and
    /// up is world +z orthogonalized against it.
    fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let forward = -Vector3::from(self.direction());
        let right = forward.cross(&Vector3::z()).normalize();
        let up = right.cross(&forward);
        (right, up, forward)
    }
}

pub fn sample_virtual_camera(rng: &mut Rng) -> VirtualCamera {
    // 1 - u maps [0, 1) onto (0, 1], so the azimuth lands in (-pi, pi].
    let u: f64 = rng.random();
    let azimuth = -PI + (1.0 - u) * 2.0 * PI;
    let elevation = rng.random_range(-MAX_ELEVATION..MAX_ELEVATION);
    let distance = rng.random_range(MIN_DISTANCE..MAX_DISTANCE);
    VirtualCamera {
        azimuth,
        elevation,
        distance,
    }
}

/// A 2D pose in image-plane units. Masked joints sit at exactly (0, 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl Pose2D {
    pub fn unmasked(coords: Vec<[f64; 2]>) -> Self {
        let mask = vec![false; coords.len()];
        Pose2D { coords, mask }
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    /// Row layout used as encoder input: `[x0, y0, x1, y1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Shape(format!("odd 2D pose width {}", flat.len())));
        }
        Ok(Pose2D::unmasked(flat.chunks(2).map(|c| [c[0], c[1]]).collect()))
    }
}

fn project_point(cam: &VirtualCamera, p: &Point3, joint: usize) -> Result<[f64; 2]> {
    let (right, up, forward) = cam.basis();
    let rel = Vector3::from(*p) - Vector3::from(cam.position());
    let depth = rel.dot(&forward);
    if !(depth > 1e-9) {
        return Err(Error::Projection { joint, depth });
    }
    Ok([rel.dot(&right) / depth, rel.dot(&up) / depth])
}

/// Pinhole projection with unit focal length, centered on the projection of
/// the mid-hip (the origin of a canonical pose).
pub fn project_points(coords: &[Point3], cam: &VirtualCamera) -> Result<Pose2D> {
    let origin = project_point(cam, &[0.0; 3], usize::MAX)?;
    let projected = coords
        .iter()
        .enumerate()
        .map(|(j, p)| {
            project_point(cam, p, j).map(|q| [q[0] - origin[0], q[1] - origin[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose2D::unmasked(projected))
}

pub fn project_perspective(pose: &CanonicalPose, cam: &VirtualCamera) -> Result<Pose2D> {
    project_points(&pose.coords, cam)
}

/// Rescales unit-focal image coordinates by the camera distance, so the
/// image plane is measured in normalized-pose units at the root's depth.
pub fn to_root_depth_units(pose: &Pose2D, cam: &VirtualCamera) -> Pose2D {
    let s = cam.distance;
    Pose2D {
        coords: pose
            .coords
            .iter()
            .zip(&pose.mask)
            .map(|(c, &m)| if m { [0.0, 0.0] } else { [c[0] * s, c[1] * s] })
            .collect(),
        mask: pose.mask.clone(),
    }
}

/// Negates x-coordinates; joint identities are not swapped.
pub fn flip_horizontal(pose: &CanonicalPose) -> CanonicalPose {
    CanonicalPose {
        coords: pose.coords.iter().map(|p| [-p[0], p[1], p[2]]).collect(),
        facing_angle: pose.facing_angle,
    }
}

/// Adds N(0, variance) noise to every unmasked coordinate.
pub fn jitter_2d(pose: &Pose2D, variance: f64, rng: &mut Rng) -> Result<Pose2D> {
    if !(variance >= 0.0) {
        return Err(Error::Validation(format!("jitter variance {variance} is negative")));
    }
    if variance == 0.0 {
        return Ok(pose.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::Validation(format!("jitter: {e}")))?;
    let coords = pose
        .coords
        .iter()
        .zip(&pose.mask)
        .map(|(c, &m)| {
            if m {
                *c
            } else {
                [c[0] + normal.sample(rng), c[1] + normal.sample(rng)]
            }
        })
        .collect();
    Ok(Pose2D {
        coords,
        mask: pose.mask.clone(),
    })
}

/// Masks each joint independently with probability `prob`.
pub fn mask_joints(pose: &Pose2D, prob: f64, rng: &mut Rng) -> Result<Pose2D> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Validation(format!("mask probability {prob} outside [0, 1]")));
    }
    let mut out = pose.clone();
    for (c, m) in out.coords.iter_mut().zip(out.mask.iter_mut()) {
        if rng.random_bool(prob) {
            *c = [0.0, 0.0];
            *m = true;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub jitter_variance: f64,
    pub mask_prob: f64,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            jitter_variance: 0.01,
            mask_prob: 0.01,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Cameras only: no flip, jitter or masking.
    pub fn clean() -> Self {
        AugmentConfig {
            jitter_variance: 0.0,
            mask_prob: 0.0,
            flip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_variance >= 0.0) {
            return Err(Error::Config("jitter variance must be non-negative".into()));
        }
        for (name, p) in [("mask", self.mask_prob), ("flip", self.flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Two views of one 3D pose with their camera directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub anchor: Pose2D,
    pub positive: Pose2D,
    pub v_anchor: [f64; 3],
    pub v_positive: [f64; 3],
}

/// One augmented view: project, rescale to root-depth units, jitter, mask.
pub fn render_view(
    pose: &CanonicalPose,
    cam: &VirtualCamera,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Pose2D> {
    let p = to_root_depth_units(&project_perspective(pose, cam)?, cam);
    let p = jitter_2d(&p, cfg.jitter_variance, rng)?;
    mask_joints(&p, cfg.mask_prob, rng)
}

pub fn make_pair_with_cameras(
    pose: &CanonicalPose,
    cam_anchor: &VirtualCamera,
    cam_positive: &VirtualCamera,
    flip: bool,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<ContrastivePair> {
    let flipped;
    let source = if flip {
        flipped = flip_horizontal(pose);
        &flipped
    } else {
        pose
    };
    Ok(ContrastivePair {
        anchor: render_view(source, cam_anchor, cfg, rng)?,
        positive: render_view(source, cam_positive, cfg, rng)?,
        v_anchor: cam_anchor.direction(),
        v_positive: cam_positive.direction(),
    })
}

/// Samples two independent cameras and one flip coin for the pair.
pub fn make_contrastive_pair(
    pose: &CanonicalPose,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<ContrastivePair> {
    cfg.validate()?;
    let cam_a = sample_virtual_camera(rng);
    let cam_p = sample_virtual_camera(rng);
    let flip = rng.random_bool(cfg.flip_prob);
    make_pair_with_cameras(pose, &cam_a, &cam_p, flip, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    fn pose() -> CanonicalPose {
        let coords = (0..17)
            .map(|j| {
                let t = j as f64;
                [0.3 * (t * 0.7).sin(), 0.2 * (t * 1.3).cos(), 0.05 * t - 0.4]
            })
            .collect::<Vec<_>>();
        let mut coords = coords;
        coords[0] = [0.0; 3];
        CanonicalPose {
            coords,
            facing_angle: 0.3,
        }
    }

    #[test]
    fn camera_direction_is_unit() {
        let c = VirtualCamera::new(0.0, 0.0, 5.0).unwrap();
        assert_eq!(c.direction(), [1.0, 0.0, 0.0]);
        let p = c.position();
        assert_abs_diff_eq!(p[2], 0.0);
        assert_abs_diff_eq!((p[0] * p[0] + p[1] * p[1]).sqrt(), 5.0, epsilon = 1e-12);
        let mut rng = seeded(3);
        for _ in 0..100 {
            let d = sample_virtual_camera(&mut rng).direction();
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        }
        assert!(VirtualCamera::new(0.0, 1.0, 5.0).is_err());
        assert!(VirtualCamera::new(0.0, 0.0, 4.0).is_err());
        assert!(VirtualCamera::new(-PI, 0.0, 5.0).is_err());
    }

    #[test]
    fn camera_sampling_is_seeded() {
        let a = sample_virtual_camera(&mut seeded(11));
        let b = sample_virtual_camera(&mut seeded(11));
        let c = sample_virtual_camera(&mut seeded(12));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn root_projects_to_origin() {
        let cam = VirtualCamera::new(1.1, 0.3, 7.0).unwrap();
        let p = project_perspective(&pose(), &cam).unwrap();
        assert_eq!(p.coords[0], [0.0, 0.0]);
        assert!(p.mask.iter().all(|m| !m));
    }

    #[test]
    fn perspective_hand_value() {
        // Camera at (0, 5, 0) looking down -y: right = (-1, 0, 0), so the point
        // (0.4, 0, 0) sits at depth 5 and image x = -0.4 / 5.
        let cam = VirtualCamera::new(PI / 2.0, 0.0, 5.0).unwrap();
        let p = project_points(&[[0.0; 3], [0.4, 0.0, 0.0]], &cam).unwrap();
        assert_abs_diff_eq!(p.coords[1][0], -0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coords[1][1], 0.0, epsilon = 1e-12);
        assert!((p.coords[1][0].abs() - 0.08).abs() <= 0.02 * 0.08);
    }

    #[test]
    fn doubling_distance_halves_projection() {
        let near = VirtualCamera::new(0.4, 0.1, 5.0).unwrap();
        let far = VirtualCamera { distance: 10.0, ..near };
        let a = project_perspective(&pose(), &near).unwrap();
        let b = project_perspective(&pose(), &far).unwrap();
        for (p, q) in a.coords.iter().zip(&b.coords).skip(1) {
            for k in 0..2 {
                if p[k].abs() > 1e-3 {
                    let ratio = p[k] / q[k];
                    assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
                }
            }
        }
    }

    #[test]
    fn joint_behind_camera_is_an_error() {
        let cam = VirtualCamera::new(0.0, 0.0, 5.0).unwrap();
        let err = project_points(&[[0.0; 3], [6.0, 0.0, 0.0]], &cam).unwrap_err();
        assert!(matches!(err, Error::Projection { joint: 1, .. }));
    }

    #[test]
    fn flip_is_an_involution() {
        let p = pose();
        assert_eq!(flip_horizontal(&flip_horizontal(&p)), p);
        let zero_x = CanonicalPose {
            coords: p.coords.iter().map(|c| [0.0, c[1], c[2]]).collect(),
            facing_angle: 0.0,
        };
        assert_eq!(flip_horizontal(&zero_x).coords, zero_x.coords);
        let hip = CanonicalPose {
            coords: vec![[0.1, 0.0, 0.0]],
            facing_angle: 0.0,
        };
        assert_eq!(flip_horizontal(&hip).coords[0], [-0.1, 0.0, 0.0]);
    }

    #[test]
    fn zero_jitter_and_zero_mask_are_identities() {
        let cam = VirtualCamera::new(0.2, 0.0, 6.0).unwrap();
        let p = project_perspective(&pose(), &cam).unwrap();
        let mut rng = seeded(0);
        assert_eq!(jitter_2d(&p, 0.0, &mut rng).unwrap(), p);
        assert_eq!(mask_joints(&p, 0.0, &mut rng).unwrap(), p);
        let all = mask_joints(&p, 1.0, &mut rng).unwrap();
        assert!(all.mask.iter().all(|&m| m));
        assert!(all.coords.iter().all(|c| *c == [0.0, 0.0]));
        let jittered = jitter_2d(&all, 0.5, &mut rng).unwrap();
        assert!(jittered.coords.iter().all(|c| *c == [0.0, 0.0]));
        assert!(jitter_2d(&p, -1.0, &mut rng).is_err());
        assert!(mask_joints(&p, 1.5, &mut rng).is_err());
    }

    #[test]
    fn pair_with_equal_cameras_and_no_augmentation_matches() {
        let cam = VirtualCamera::new(-0.7, 0.2, 8.0).unwrap();
        let cfg = AugmentConfig::clean();
        let pair = make_pair_with_cameras(&pose(), &cam, &cam, false, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(pair.anchor, pair.positive);
        assert_eq!(pair.v_anchor, pair.v_positive);
    }

    #[test]
    fn pair_generation_is_seeded() {
        let cfg = AugmentConfig::default();
        let a = make_contrastive_pair(&pose(), &cfg, &mut seeded(5)).unwrap();
        let b = make_contrastive_pair(&pose(), &cfg, &mut seeded(5)).unwrap();
        let c = make_contrastive_pair(&pose(), &cfg, &mut seeded(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
