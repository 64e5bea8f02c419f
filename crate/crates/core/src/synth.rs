//! Procedural jump-like motions on the canonical skeleton, with exact ground
//! truth for the rink plane, facing angles and per-frame phase labels.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{project_points, sample_virtual_camera, to_root_depth_units, Pose2D};
use crate::error::{Error, Result};
use crate::geometry::{
    align_to_gravity, canonicalize_aligned, fit_ground_plane, normalize_pose, wrap_angle, CanonicalPose, Plane,
    RansacConfig,
};
use crate::rng::{self, Rng};
use crate::skeleton::{joint, Frame3, Point3, PoseSequence3D, Skeleton};
use crate::tas::schema::{ActionLabel, JumpType};
use crate::train::{LabeledSequence, LabeledSequenceDataset};

/// Limb pattern and takeoff/landing style of one motion class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStyle {
    pub jump: JumpType,
    pub rotations: u8,
    /// Arm elevation during entry (0 down, pi/2 sideways, pi overhead).
    pub entry_arm_elevation: f64,
    /// Forward/backward arm swing amplitude during entry.
    pub entry_arm_swing: f64,
    /// Free-leg hip flexion during entry (negative reaches back).
    pub free_leg_flexion: f64,
    pub support_knee_bend: f64,
    pub air_arm_elevation: f64,
    pub air_elbow_bend: f64,
    pub air_leg_abduction: f64,
    pub torso_lean: f64,
    pub limb_phases: [f64; 4],
}

const STYLES: [ClassStyle; 6] = [
    // Forward takeoff, wide arms, tight tuck in the air.
    ClassStyle {
        jump: JumpType::Axel,
        rotations: 2,
        entry_arm_elevation: 1.4,
        entry_arm_swing: 0.5,
        free_leg_flexion: 0.7,
        support_knee_bend: 0.7,
        air_arm_elevation: 0.5,
        air_elbow_bend: 2.0,
        air_leg_abduction: 0.0,
        torso_lean: 0.15,
        limb_phases: [0.0, PI, 0.0, PI],
    },
    // Toe-assisted takeoff with the free leg reaching back, arms overhead.
    ClassStyle {
        jump: JumpType::Lutz,
        rotations: 3,
        entry_arm_elevation: 0.6,
        entry_arm_swing: 1.0,
        free_leg_flexion: -0.8,
        support_knee_bend: 0.4,
        air_arm_elevation: 2.7,
        air_elbow_bend: 0.3,
        air_leg_abduction: 0.05,
        torso_lean: 0.35,
        limb_phases: [0.0, 0.0, PI / 2.0, PI / 2.0],
    },
    // Deep knee, sweeping free leg, low arms and open legs in the air.
    ClassStyle {
        jump: JumpType::Salchow,
        rotations: 1,
        entry_arm_elevation: 0.9,
        entry_arm_swing: 0.3,
        free_leg_flexion: 0.5,
        support_knee_bend: 1.0,
        air_arm_elevation: 0.25,
        air_elbow_bend: 0.8,
        air_leg_abduction: 0.35,
        torso_lean: -0.05,
        limb_phases: [PI / 2.0, -PI / 2.0, 0.0, 0.0],
    },
    ClassStyle {
        jump: JumpType::Flip,
        rotations: 2,
        entry_arm_elevation: 1.1,
        entry_arm_swing: 0.7,
        free_leg_flexion: -0.6,
        support_knee_bend: 0.6,
        air_arm_elevation: 1.0,
        air_elbow_bend: 1.5,
        air_leg_abduction: 0.1,
        torso_lean: 0.25,
        limb_phases: [PI, 0.0, PI, 0.0],
    },
    ClassStyle {
        jump: JumpType::Loop,
        rotations: 3,
        entry_arm_elevation: 0.4,
        entry_arm_swing: 0.4,
        free_leg_flexion: 0.9,
        support_knee_bend: 0.8,
        air_arm_elevation: 1.8,
        air_elbow_bend: 1.0,
        air_leg_abduction: 0.0,
        torso_lean: 0.0,
        limb_phases: [0.0, PI / 2.0, PI, 3.0 * PI / 2.0],
    },
    ClassStyle {
        jump: JumpType::ToeLoop,
        rotations: 1,
        entry_arm_elevation: 1.6,
        entry_arm_swing: 0.2,
        free_leg_flexion: -1.0,
        support_knee_bend: 0.5,
        air_arm_elevation: 0.8,
        air_elbow_bend: 2.3,
        air_leg_abduction: 0.2,
        torso_lean: 0.1,
        limb_phases: [PI, PI, 0.0, PI],
    },
];

/// Style of class `c`; classes past the table reuse it with shifted rotation
/// counts.
pub fn class_style(class_id: usize) -> ClassStyle {
    let mut s = STYLES[class_id % STYLES.len()];
    let shift = (class_id / STYLES.len()) as u8;
    s.rotations = (s.rotations - 1 + shift) % 4 + 1;
    if s.jump == JumpType::Axel && s.rotations == 4 {
        s.rotations = 3;
    }
    s
}

/// Frame counts of the five phases: glide-in, entry, flight, landing,
/// glide-out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phases {
    pub glide_in: usize,
    pub entry: usize,
    pub air: usize,
    pub landing: usize,
    pub glide_out: usize,
}

impl Phases {
    /// Splits `frames` roughly 1:3:2.5:2:1.
    pub fn for_duration(frames: usize) -> Self {
        let air = ((frames as f64 * 0.25).round() as usize).max(1);
        let entry = ((frames as f64 * 0.3).round() as usize).max(1);
        let landing = ((frames as f64 * 0.2).round() as usize).max(0);
        let rest = frames.saturating_sub(air + entry + landing);
        let glide_in = rest / 2;
        let glide_out = rest - glide_in;
        Phases {
            glide_in,
            entry,
            air,
            landing,
            glide_out,
        }
    }

    pub fn total(&self) -> usize {
        self.glide_in + self.entry + self.air + self.landing + self.glide_out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub class_id: usize,
    pub duration: usize,
    /// Rotation rate in flight, radians per frame. On the ice the body turns
    /// at a tenth of this.
    pub angular_velocity: f64,
    /// Peak height of the flight arc, meters.
    pub apex_height: f64,
    /// Swing phase offsets: left arm, right arm, left leg, right leg.
    pub limb_phases: [f64; 4],
    /// Standard deviation of per-joint Gaussian noise, meters.
    pub noise: f64,
    pub seed: u64,
    /// Initial heading about the vertical axis.
    #[serde(default)]
    pub heading: f64,
    /// Per-instance variation of limb amplitudes and body proportions, drawn
    /// from `seed` when true.
    #[serde(default = "default_true")]
    pub vary: bool,
    /// Tilt of the capture frame relative to the rink, radians.
    #[serde(default)]
    pub tilt: f64,
}

fn default_true() -> bool {
    true
}

impl MotionSpec {
    /// Nominal spec of a class: its rotation count spread over the flight.
    pub fn for_class(class_id: usize, duration: usize, seed: u64) -> Self {
        let style = class_style(class_id);
        let phases = Phases::for_duration(duration);
        MotionSpec {
            class_id,
            duration,
            angular_velocity: style.rotations as f64 * TAU / phases.air as f64,
            apex_height: 0.45,
            limb_phases: style.limb_phases,
            noise: 0.005,
            seed,
            heading: 0.0,
            vary: true,
            tilt: 0.0,
        }
    }

    /// A randomized instance of `class_id`: heading, rotation rate, height
    /// and limb phases are perturbed.
    pub fn sample(class_id: usize, duration: usize, noise: f64, rng: &mut Rng) -> Self {
        let mut spec = MotionSpec::for_class(class_id, duration, rng.random());
        spec.angular_velocity *= rng.random_range(0.85..1.15);
        spec.apex_height = rng.random_range(0.3..0.6);
        for p in &mut spec.limb_phases {
            *p += rng.random_range(-0.6..0.6);
        }
        spec.heading = rng.random_range(-PI..PI);
        spec.tilt = rng.random_range(0.0..0.05);
        spec.noise = noise;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration < 2 {
            return Err(Error::Validation(format!("duration {} < 2 frames", self.duration)));
        }
        if !self.angular_velocity.is_finite() || !self.apex_height.is_finite() || !self.heading.is_finite() {
            return Err(Error::Validation("motion parameters must be finite".into()));
        }
        if !(self.noise >= 0.0) || !(self.apex_height >= 0.0) {
            return Err(Error::Validation("noise and apex height must be >= 0".into()));
        }
        if !(0.0..=0.5).contains(&self.tilt) {
            return Err(Error::Validation(format!("tilt {} outside [0, 0.5]", self.tilt)));
        }
        Ok(())
    }
}

/// A generated motion with its ground truth.
#[derive(Clone, Debug)]
pub struct SynthMotion {
    pub sequence: PoseSequence3D,
    /// The rink plane in the capture frame.
    pub plane: Plane,
    /// Rotation that facing alignment removes at each frame, in (-pi, pi].
    pub facing: Vec<f64>,
    /// Element-level phase labels.
    pub labels: Vec<ActionLabel>,
    /// Frames in flight.
    pub airborne: Vec<bool>,
}

/// Per-instance body and amplitude variation.
#[derive(Clone, Copy, Debug)]
struct Body {
    scale: f64,
    thigh: f64,
    shin: f64,
    upper_arm: f64,
    forearm: f64,
    amp: [f64; 6],
}

impl Body {
    fn draw(vary: bool, rng: &mut Rng) -> Self {
        let mut j = |lo: f64, hi: f64| if vary { rng.random_range(lo..hi) } else { 0.5 * (lo + hi) };
        Body {
            scale: j(0.9, 1.1),
            thigh: j(0.42, 0.48),
            shin: j(0.42, 0.48),
            upper_arm: j(0.27, 0.31),
            forearm: j(0.25, 0.29),
            amp: [j(0.6, 1.4), j(0.6, 1.4), j(0.6, 1.4), j(0.6, 1.4), j(0.6, 1.4), j(0.6, 1.4)],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LimbPose {
    /// Left, right arm: (elevation, swing, elbow bend).
    arms: [(f64, f64, f64); 2],
    /// Left, right leg: (flexion, abduction, knee bend).
    legs: [(f64, f64, f64); 2],
    lean: f64,
}

/// Lowest joint height on any airborne frame, meters.
const AIR_CLEARANCE: f64 = 0.1;
const GLIDE_SPEED: f64 = 0.2;
const GLIDE_RADIUS: f64 = 2.0;
const HIP_HALF_WIDTH: f64 = 0.1;
const SHOULDER_HALF_WIDTH: f64 = 0.18;

/// Body-frame joints (left hip on +x, facing -y, z up, mid-hip at origin).
fn body_frame(body: &Body, pose: &LimbPose) -> Frame3 {
    let mut f = vec![[0.0; 3]; 17];
    let forward = Vector3::new(0.0, -1.0, 0.0);
    for (side, sgn) in [(0usize, 1.0f64), (1, -1.0)] {
        let (flex, abd, knee) = pose.legs[side];
        let hip = Vector3::new(sgn * HIP_HALF_WIDTH, 0.0, 0.0);
        let thigh = Vector3::new(sgn * abd.sin(), -flex.sin() * abd.cos(), -flex.cos() * abd.cos());
        let shin = Vector3::new(
            sgn * abd.sin(),
            -(flex - knee).sin() * abd.cos(),
            -(flex - knee).cos() * abd.cos(),
        );
        let k = hip + thigh * body.thigh;
        let a = k + shin * body.shin;
        let (hj, kj, aj) = if side == 0 {
            (joint::LEFT_HIP, joint::LEFT_KNEE, joint::LEFT_ANKLE)
        } else {
            (joint::RIGHT_HIP, joint::RIGHT_KNEE, joint::RIGHT_ANKLE)
        };
        f[hj] = hip.into();
        f[kj] = k.into();
        f[aj] = a.into();
    }
    // Upper body, before the lean.
    let mut upper = vec![(joint::CHEST, Vector3::new(0.0, 0.0, 0.25))];
    upper.push((joint::NECK, Vector3::new(0.0, 0.0, 0.5)));
    upper.push((joint::NOSE, Vector3::new(0.0, -0.1, 0.6)));
    upper.push((joint::HEAD, Vector3::new(0.0, 0.0, 0.7)));
    for (side, sgn) in [(0usize, 1.0f64), (1, -1.0)] {
        let (elev, swing, elbow) = pose.arms[side];
        let shoulder = Vector3::new(sgn * SHOULDER_HALF_WIDTH, 0.0, 0.47);
        let dir = Vector3::new(
            sgn * elev.sin() * swing.cos(),
            -swing.sin(),
            -elev.cos() * swing.cos(),
        )
        .normalize();
        let perp = forward - dir * forward.dot(&dir);
        let perp = if perp.norm() > 1e-9 { perp.normalize() } else { Vector3::z() };
        let fore = (dir * elbow.cos() + perp * elbow.sin()).normalize();
        let e = shoulder + dir * body.upper_arm;
        let w = e + fore * body.forearm;
        let (sj, ej, wj) = if side == 0 {
            (joint::LEFT_SHOULDER, joint::LEFT_ELBOW, joint::LEFT_WRIST)
        } else {
            (joint::RIGHT_SHOULDER, joint::RIGHT_ELBOW, joint::RIGHT_WRIST)
        };
        upper.push((sj, shoulder));
        upper.push((ej, e));
        upper.push((wj, w));
    }
    let lean = Rotation3::from_axis_angle(&Vector3::x_axis(), pose.lean);
    for (j, p) in upper {
        f[j] = (lean * p).into();
    }
    f[joint::PELVIS] = [0.0; 3];
    for p in &mut f {
        for c in p.iter_mut() {
            *c *= body.scale;
        }
    }
    f
}

/// Phase of frame `t`: 0 glide-in, 1 entry, 2 air, 3 landing, 4 glide-out,
/// with the progress through that phase in [0, 1).
fn phase_of(p: &Phases, t: usize) -> (usize, f64) {
    let bounds = [p.glide_in, p.entry, p.air, p.landing, p.glide_out];
    let mut start = 0;
    for (i, &len) in bounds.iter().enumerate() {
        if t < start + len {
            return (i, (t - start) as f64 / len as f64);
        }
        start += len;
    }
    (4, 1.0)
}

fn limb_pose(style: &ClassStyle, spec: &MotionSpec, body: &Body, phase: usize, u: f64, t: usize) -> LimbPose {
    let a = &body.amp;
    let ph = &spec.limb_phases;
    let osc = |k: usize| (TAU * t as f64 / 12.0 + ph[k]).sin();
    let straight = (0.05, 0.0, 0.05);
    match phase {
        2 => {
            let e = style.air_arm_elevation * (0.85 + 0.15 * a[0]);
            let bend = style.air_elbow_bend * (0.8 + 0.2 * a[1]);
            let abd = style.air_leg_abduction * a[2];
            let cross = 0.25 * (osc(0) * 0.3);
            LimbPose {
                arms: [(e, 0.5 + cross, bend), (e, 0.5 - cross, bend)],
                legs: [(0.1 * a[3], abd, 0.1), (0.1 * a[4], abd, 0.1)],
                lean: style.torso_lean * 0.3,
            }
        }
        _ => {
            // On the ice: left foot carries the entry, right foot the landing.
            let support_left = phase <= 1;
            let depth = match phase {
                1 => u,
                3 => 1.0 - u,
                _ => 0.3,
            };
            let knee = style.support_knee_bend * (0.4 + 0.6 * depth) * (0.8 + 0.2 * a[5]);
            let support = (knee * 0.5, 0.0, knee);
            let free_flex = if phase == 3 {
                -0.7 * a[2]
            } else {
                style.free_leg_flexion * (0.5 + 0.5 * depth) * a[2] + 0.25 * osc(if support_left { 3 } else { 2 })
            };
            let free_flex = if free_flex.abs() < 0.45 { 0.45f64.copysign(free_flex) } else { free_flex };
            let free = (free_flex, 0.08 * a[3], 0.5 + 0.3 * depth);
            let elev = if phase == 3 { 1.5 } else { style.entry_arm_elevation * (0.7 + 0.3 * a[0]) };
            let swing = style.entry_arm_swing * a[1];
            let arms = [
                (elev + 0.2 * osc(0), swing * osc(0), 0.3),
                (elev + 0.2 * osc(1), swing * osc(1), 0.3),
            ];
            let legs = if support_left { [support, free] } else { [free, support] };
            let lean = style.torso_lean * (0.5 + depth);
            let _ = straight;
            LimbPose { arms, legs, lean }
        }
    }
}

/// Generates one motion. The figure glides, takes off, rotates in flight on a
/// ballistic arc and lands; ground truth is exact up to the added noise.
pub fn generate_motion(spec: &MotionSpec) -> Result<SynthMotion> {
    spec.validate()?;
    let style = class_style(spec.class_id);
    let phases = Phases::for_duration(spec.duration);
    let mut rng = rng::seeded(spec.seed);
    let body = Body::draw(spec.vary, &mut rng);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");

    // Flight height floor: the lowest flight joint clears the ice.
    let mut frames: Vec<Frame3> = Vec::with_capacity(spec.duration);
    let mut facing = Vec::with_capacity(spec.duration);
    let mut labels = Vec::with_capacity(spec.duration);
    let mut airborne = Vec::with_capacity(spec.duration);
    let mut heading = spec.heading;
    let mut ground_pelvis = None;
    let label_jump = ActionLabel::Jump {
        jump: style.jump,
        rotations: Some(style.rotations),
    };
    for t in 0..spec.duration {
        let (phase, u) = phase_of(&phases, t);
        let in_air = phase == 2;
        let lp = limb_pose(&style, spec, &body, phase, u, t);
        let local = body_frame(&body, &lp);
        let min_z = local.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
        let lift = if in_air {
            let s = (t - phases.glide_in - phases.entry) as f64 + 0.5;
            let v = s / phases.air as f64;
            let arc = 4.0 * spec.apex_height * v * (1.0 - v);
            let base: f64 = ground_pelvis.unwrap_or(-min_z);
            (base + arc).max(-min_z + AIR_CLEARANCE)
        } else {
            // The support foot is normally the lowest joint; if a deep bend
            // drops something else lower, that joint touches the ice instead.
            let support = if phase <= 1 { joint::LEFT_ANKLE } else { joint::RIGHT_ANKLE };
            let h = (-local[support][2]).max(-min_z);
            ground_pelvis = Some(h);
            h
        };
        let (s, c) = heading.sin_cos();
        // The skater glides along a circular arc, so contact points spread
        // over an area rather than a line.
        let arc = GLIDE_SPEED * t as f64 / GLIDE_RADIUS;
        let (px, py) = (GLIDE_RADIUS * arc.sin(), GLIDE_RADIUS * (1.0 - arc.cos()));
        let frame: Frame3 = local
            .iter()
            .map(|p| {
                [
                    c * p[0] - s * p[1] + px,
                    s * p[0] + c * p[1] + py,
                    p[2] + lift,
                ]
            })
            .collect();
        frames.push(frame);
        facing.push(wrap_angle(-heading));
        airborne.push(in_air);
        labels.push(match phase {
            1 => ActionLabel::Entry(style.jump),
            2 => label_jump,
            3 => ActionLabel::Landing,
            _ => ActionLabel::None,
        });
        let rate = if in_air { 1.0 } else { 0.1 };
        heading += spec.angular_velocity * rate;
    }

    // Noise, then the capture frame: a tilt about a random horizontal axis
    // and an offset.
    let axis_angle: f64 = rng.random_range(-PI..PI);
    let axis = Unit::new_normalize(Vector3::new(axis_angle.cos(), axis_angle.sin(), 0.0));
    let rot = Rotation3::from_axis_angle(&axis, spec.tilt);
    let shift = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
    let frames: Vec<Frame3> = frames
        .into_iter()
        .map(|f| {
            f.into_iter()
                .map(|p| {
                    let q = Vector3::new(
                        p[0] + noise.sample(&mut rng),
                        p[1] + noise.sample(&mut rng),
                        p[2] + noise.sample(&mut rng),
                    );
                    (rot * q + shift).into()
                })
                .collect()
        })
        .collect();
    let normal = rot * Vector3::z();
    let plane = Plane::new(normal.into(), normal.dot(&shift))?;
    let sequence = PoseSequence3D::new(
        Skeleton::canonical(),
        frames,
        30.0,
        format!("synth-c{}", spec.class_id),
        format!("{:016x}", spec.seed),
    )?;
    Ok(SynthMotion {
        sequence,
        plane,
        facing,
        labels,
        airborne,
    })
}

/// Gravity-aligned, centered and scale-normalized frames that keep their
/// facing, so rotation stays visible to a camera.
pub fn upright_frames(motion: &PoseSequence3D, cfg: &RansacConfig) -> Result<Vec<Frame3>> {
    let plane = fit_ground_plane(motion, cfg)?;
    let aligned = align_to_gravity(motion, &plane);
    let lm = aligned.skeleton.landmarks();
    aligned.frames.iter().map(|f| normalize_pose(f, lm)).collect()
}

/// Fully canonical poses (gravity, facing, scale).
pub fn canonical_frames(motion: &PoseSequence3D, cfg: &RansacConfig) -> Result<Vec<CanonicalPose>> {
    let plane = fit_ground_plane(motion, cfg)?;
    canonicalize_aligned(&align_to_gravity(motion, &plane))
}

/// Projects a sequence of upright frames through one random camera, in
/// root-depth units.
pub fn project_sequence(frames: &[Frame3], rng: &mut Rng) -> Result<Vec<Pose2D>> {
    let cam = sample_virtual_camera(rng);
    frames
        .iter()
        .map(|f| project_points(f, &cam).map(|p| to_root_depth_units(&p, &cam)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub frames: usize,
    /// Share of motion instances per class held out for testing.
    pub test_fraction: f64,
    pub noise: f64,
    /// Canonical poses drawn from each training motion for the 3D pool.
    pub pool_per_motion: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_per_class: 10,
            classes: 3,
            frames: 32,
            test_fraction: 0.5,
            noise: 0.005,
            pool_per_motion: 4,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.classes == 0 {
            return Err(Error::Config("n_per_class and classes must be >= 1".into()));
        }
        if self.frames < 8 {
            return Err(Error::Config(format!("need at least 8 frames per motion, got {}", self.frames)));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub train: LabeledSequenceDataset,
    pub test: LabeledSequenceDataset,
    /// Motion instance ids behind `train.items` and `test.items`.
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    /// Canonical 3D poses from the training motions.
    pub pose_pool: Vec<CanonicalPose>,
    /// Per-frame labels of every motion, train then test.
    pub timelines: Vec<(u64, Vec<ActionLabel>)>,
}

pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| {
            let s = class_style(c);
            format!("{}{}", s.rotations, s.jump.name())
        })
        .collect()
}

/// Labeled 2D sequences (one random camera each) plus the 3D pool, split by
/// motion instance.
pub fn generate_dataset_with(cfg: &DatasetConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let names = class_names(cfg.classes);
    let ransac = RansacConfig::default();
    let n_test = ((cfg.n_per_class as f64) * cfg.test_fraction).round() as usize;
    let n_test = n_test.min(cfg.n_per_class.saturating_sub(1));
    let mut out = SynthDataset {
        train: LabeledSequenceDataset::new(names.clone()),
        test: LabeledSequenceDataset::new(names),
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        pose_pool: Vec::new(),
        timelines: Vec::new(),
    };
    let mut test_timelines = Vec::new();
    for c in 0..cfg.classes {
        let mut order: Vec<usize> = (0..cfg.n_per_class).collect();
        let mut split_rng = rng::derived(cfg.seed, &[1, c as u64]);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut split_rng);
        let test_set: Vec<usize> = order[..n_test].to_vec();
        for i in 0..cfg.n_per_class {
            let id = rng::derive_seed(cfg.seed, &[2, c as u64, i as u64]);
            let mut r = rng::seeded(id);
            let spec = MotionSpec::sample(c, cfg.frames, cfg.noise, &mut r);
            let motion = generate_motion(&spec)?;
            let upright = upright_frames(&motion.sequence, &ransac)?;
            let frames = project_sequence(&upright, &mut r)?;
            let item = LabeledSequence { label: c, frames };
            if test_set.contains(&i) {
                out.test.items.push(item);
                out.test_ids.push(id);
                test_timelines.push((id, motion.labels));
            } else {
                let canon = canonical_frames(&motion.sequence, &ransac)?;
                let picks = rand::seq::index::sample(&mut r, canon.len(), cfg.pool_per_motion.min(canon.len()));
                let mut picks: Vec<usize> = picks.into_vec();
                picks.sort_unstable();
                out.pose_pool.extend(picks.into_iter().map(|k| canon[k].clone()));
                out.train.items.push(item);
                out.train_ids.push(id);
                out.timelines.push((id, motion.labels));
            }
        }
    }
    out.timelines.extend(test_timelines);
    Ok(out)
}

/// `generate_dataset(n_per_class, classes, seed)` with the remaining
/// settings at their defaults.
pub fn generate_dataset(n_per_class: usize, classes: usize, seed: u64) -> Result<SynthDataset> {
    generate_dataset_with(&DatasetConfig {
        n_per_class,
        classes,
        seed,
        ..DatasetConfig::default()
    })
}

/// What the `synth` command writes: a labeled 2D dataset, a corpus of raw
/// 3D motions for pretraining and any explicitly listed motions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dataset: DatasetConfig,
    /// Randomized 3D motions for the pretraining corpus.
    pub pool_motions: usize,
    /// Classes the corpus motions are drawn from (cycled).
    pub pool_classes: usize,
    #[serde(rename = "motion")]
    pub motions: Vec<MotionSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dataset: DatasetConfig::default(),
            pool_motions: 500,
            pool_classes: 6,
            motions: Vec::new(),
            seed: 0,
        }
    }
}

/// `count` randomized motions, classes cycling through `0..classes`. Trial
/// names are `pool-00000`, `pool-00001`, ...
pub fn generate_motion_corpus(
    count: usize,
    classes: usize,
    frames: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<SynthMotion>> {
    if classes == 0 {
        return Err(Error::Config("classes must be >= 1".into()));
    }
    (0..count)
        .map(|m| {
            let mut r = rng::derived(seed, &[4, m as u64]);
            let spec = MotionSpec::sample(m % classes, frames, noise, &mut r);
            let mut motion = generate_motion(&spec)?;
            motion.sequence.trial = format!("pool-{m:05}");
            Ok(motion)
        })
        .collect()
}

/// `count` canonical poses from fresh motions of random classes, a few
/// frames per motion.
pub fn generate_pose_pool(count: usize, classes: usize, frames: usize, seed: u64) -> Result<Vec<CanonicalPose>> {
    if classes == 0 {
        return Err(Error::Config("classes must be >= 1".into()));
    }
    const PER_MOTION: usize = 4;
    let ransac = RansacConfig::default();
    let mut pool = Vec::with_capacity(count);
    let mut m = 0u64;
    while pool.len() < count {
        let mut r = rng::derived(seed, &[3, m]);
        let class = r.random_range(0..classes);
        let spec = MotionSpec::sample(class, frames, 0.005, &mut r);
        let canon = canonical_frames(&generate_motion(&spec)?.sequence, &ransac)?;
        let take = PER_MOTION.min(count - pool.len()).min(canon.len());
        let mut picks = rand::seq::index::sample(&mut r, canon.len(), take).into_vec();
        picks.sort_unstable();
        pool.extend(picks.into_iter().map(|k| canon[k].clone()));
        m += 1;
    }
    Ok(pool)
}

/// A canonical pose with every limb angle drawn independently: arms
/// anywhere from down to overhead, legs from reaching back to kicking
/// forward, knees and elbows bent at random, plus a forward or backward lean.
pub fn random_canonical_pose(rng: &mut Rng) -> Result<CanonicalPose> {
    let body = Body::draw(true, rng);
    let mut arm = || {
        (
            rng.random_range(0.0..PI),
            rng.random_range(-1.2..1.2),
            rng.random_range(0.0..2.2),
        )
    };
    let arms = [arm(), arm()];
    let mut leg = || {
        (
            rng.random_range(-0.9..1.4),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..1.6),
        )
    };
    let legs = [leg(), leg()];
    let lean = rng.random_range(-0.3..0.6);
    let frame = body_frame(&body, &LimbPose { arms, legs, lean });
    let lm = Skeleton::canonical().landmarks();
    Ok(CanonicalPose {
        coords: normalize_pose(&frame, lm)?,
        facing_angle: 0.0,
    })
}

/// `count` independently drawn random canonical poses.
pub fn generate_random_pose_pool(count: usize, seed: u64) -> Result<Vec<CanonicalPose>> {
    (0..count)
        .map(|i| random_canonical_pose(&mut rng::derived(seed, &[4, i as u64])))
        .collect()
}

/// Point helper for tests and callers that build frames by hand.
pub fn lowest_joint(frame: &[Point3]) -> f64 {
    frame.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unwrap_angles;

    fn spec(class_id: usize) -> MotionSpec {
        MotionSpec::for_class(class_id, 32, 7)
    }

    #[test]
    fn zero_rotation_keeps_facing() {
        let mut s = spec(0);
        s.angular_velocity = 0.0;
        s.heading = 0.4;
        let m = generate_motion(&s).unwrap();
        assert!(m.facing.iter().all(|&a| a == m.facing[0]));
    }

    #[test]
    fn noise_does_not_change_the_clean_motion() {
        let mut a = spec(1);
        a.noise = 0.0;
        let b = a.clone();
        let ma = generate_motion(&a).unwrap();
        let mb = generate_motion(&b).unwrap();
        assert_eq!(ma.sequence.frames, mb.sequence.frames);
    }

    #[test]
    fn ground_contact_and_airtime() {
        for c in 0..6 {
            let mut s = spec(c);
            s.noise = 0.0;
            s.tilt = 0.0;
            let m = generate_motion(&s).unwrap();
            let air = m.airborne.iter().filter(|&&a| a).count();
            assert!(air * 2 < m.airborne.len());
            for (f, &a) in m.sequence.frames.iter().zip(&m.airborne) {
                let z = lowest_joint(f) - m.plane.offset;
                if a {
                    assert!(z > 0.09, "class {c}: airborne frame at {z}");
                } else {
                    assert!(z.abs() < 1e-9, "class {c}: support foot at {z}");
                }
            }
        }
    }

    #[test]
    fn facing_matches_canonicalization() {
        let mut s = spec(2);
        s.noise = 0.0;
        s.tilt = 0.1;
        let m = generate_motion(&s).unwrap();
        let canon = crate::geometry::canonicalize_sequence(&m.sequence, &RansacConfig::default()).unwrap();
        let est = unwrap_angles(&canon.iter().map(|c| c.facing_angle).collect::<Vec<_>>());
        let gt = unwrap_angles(&m.facing);
        for (e, g) in est.iter().zip(&gt) {
            assert!((e - g).abs() <= 0.01 * g.abs().max(1.0), "{e} vs {g}");
        }
    }

    #[test]
    fn labels_follow_phases() {
        let m = generate_motion(&spec(1)).unwrap();
        let segs = crate::tas::schema::segments_from_frames(&m.labels);
        let kinds: Vec<_> = segs.iter().map(|s| s.label).collect();
        assert_eq!(kinds.len(), 5);
        assert_eq!(kinds[1], ActionLabel::Entry(JumpType::Lutz));
        assert_eq!(kinds[3], ActionLabel::Landing);
    }

    #[test]
    fn styles_stay_in_schema() {
        let schema = crate::tas::schema::LabelSchema::new(crate::tas::schema::Level::Element);
        for c in 0..30 {
            let s = class_style(c);
            assert!(schema.contains(ActionLabel::Jump {
                jump: s.jump,
                rotations: Some(s.rotations)
            }));
        }
    }

    #[test]
    fn plane_ground_truth_is_recovered() {
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let mut r = rng::seeded(seed);
            let s = MotionSpec::sample((seed % 3) as usize, 32, 0.005, &mut r);
            let m = generate_motion(&s).unwrap();
            let fit = fit_ground_plane(&m.sequence, &RansacConfig::default()).unwrap();
            worst = worst.max(fit.angle_to(&m.plane));
        }
        assert!(worst.to_degrees() < 0.5, "worst normal error {}", worst.to_degrees());
    }

    #[test]
    fn dataset_is_balanced_and_split_by_instance() {
        let ds = generate_dataset(10, 3, 4).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 30);
        let mut counts = ds.train.class_counts();
        for (c, n) in ds.test.class_counts().into_iter().enumerate() {
            counts[c] += n;
        }
        assert_eq!(counts, vec![10, 10, 10]);
        assert!(ds.train_ids.iter().all(|id| !ds.test_ids.contains(id)));
        assert_eq!(ds.pose_pool.len(), ds.train.len() * 4);
        for s in ds.train.items.iter().chain(&ds.test.items) {
            assert_eq!(s.frames.len(), 32);
        }
    }

    fn nearest_centroid_accuracy(ds: &SynthDataset) -> f64 {
        let flat = |s: &LabeledSequence| s.frames.iter().flat_map(|f| f.flatten()).collect::<Vec<f64>>();
        let k = ds.train.num_classes();
        let dim = flat(&ds.train.items[0]).len();
        let mut cent = vec![vec![0.0; dim]; k];
        let counts = ds.train.class_counts();
        for s in &ds.train.items {
            for (c, x) in cent[s.label].iter_mut().zip(flat(s)) {
                *c += x / counts[s.label] as f64;
            }
        }
        let hits = ds
            .test
            .items
            .iter()
            .filter(|s| {
                let x = flat(s);
                let d = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..k).min_by(|&a, &b| d(&cent[a]).total_cmp(&d(&cent[b]))).unwrap();
                best == s.label
            })
            .count();
        hits as f64 / ds.test.len() as f64
    }

    #[test]
    fn raw_coordinates_separate_classes_only_partly() {
        let ds = generate_dataset(100, 3, 0).unwrap();
        let acc = nearest_centroid_accuracy(&ds);
        assert!((0.4..=0.9).contains(&acc), "nearest-centroid accuracy {acc}");
    }

}
