use std::f64::consts::PI;

use proptest::prelude::*;

use skatepose::geometry::{
    canonicalize_sequence, normalize_pose, pose3d_feature_vector, unwrap_angles, wrap_angle, RansacConfig,
};
use skatepose::skeleton::{PoseSequence3D, Skeleton};
use skatepose::synth::{generate_motion, MotionSpec};

fn motion(class: usize, seed: u64) -> PoseSequence3D {
    generate_motion(&MotionSpec::for_class(class, 40, seed)).unwrap().sequence
}

fn moved(seq: &PoseSequence3D, angle: f64, shift: [f64; 3]) -> PoseSequence3D {
    let (s, c) = angle.sin_cos();
    let mut out = seq.clone();
    for f in &mut out.frames {
        for p in f.iter_mut() {
            *p = [
                c * p[0] - s * p[1] + shift[0],
                s * p[0] + c * p[1] + shift[1],
                p[2] + shift[2],
            ];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn canonical_poses_satisfy_their_invariants(class in 0usize..6, seed in any::<u64>()) {
        let seq = motion(class, seed);
        let lm = seq.skeleton.landmarks();
        for pose in canonicalize_sequence(&seq, &RansacConfig::default()).unwrap() {
            prop_assert!(pose.check(lm).is_ok());
            prop_assert_eq!(pose3d_feature_vector(&pose).len(), 3 * pose.num_joints() + 2);
        }
    }

    #[test]
    fn canonical_poses_ignore_turns_and_shifts(
        class in 0usize..6,
        seed in any::<u64>(),
        angle in -PI..PI,
        dx in -20.0f64..20.0,
        dy in -20.0f64..20.0,
        dz in -3.0f64..3.0,
    ) {
        let seq = motion(class, seed);
        let cfg = RansacConfig::default();
        let a = canonicalize_sequence(&seq, &cfg).unwrap();
        let b = canonicalize_sequence(&moved(&seq, angle, [dx, dy, dz]), &cfg).unwrap();
        for (p, q) in a.iter().zip(&b) {
            for (x, y) in p.coords.iter().zip(&q.coords) {
                for k in 0..3 {
                    prop_assert!((x[k] - y[k]).abs() < 1e-5);
                }
            }
            let turn = wrap_angle(q.facing_angle - p.facing_angle + angle);
            prop_assert!(turn.abs() < 1e-6, "facing changed by {} for a turn of {}", turn, angle);
        }
    }

    #[test]
    fn normalization_is_idempotent(class in 0usize..6, seed in any::<u64>(), frame in 0usize..40) {
        let seq = motion(class, seed);
        let lm = Skeleton::canonical().landmarks();
        let once = normalize_pose(&seq.frames[frame], lm).unwrap();
        let twice = normalize_pose(&once, lm).unwrap();
        for (x, y) in once.iter().zip(&twice) {
            for k in 0..3 {
                prop_assert!((x[k] - y[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unwrapped_angles_step_less_than_half_a_turn(raw in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
        let wrapped: Vec<f64> = raw.iter().map(|&a| wrap_angle(a)).collect();
        let un = unwrap_angles(&wrapped);
        prop_assert_eq!(un.len(), wrapped.len());
        for w in un.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= PI + 1e-12);
        }
        for (u, w) in un.iter().zip(&wrapped) {
            prop_assert!((wrap_angle(*u) - w).abs() < 1e-9);
        }
    }
}
