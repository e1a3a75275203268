use pose2motion::error::Error;
use pose2motion::metrics::*;
use pose2motion::motion::{contact_labels, forward_kinematics_full, ContactLabels, Frame, Motion, Pose};
use pose2motion::rotation::sub;
use pose2motion::skeleton::Skeleton;
use rand_chacha::ChaCha8Rng;
mod common;
use common::{random_motion, random_rotation, random_skeleton};
use pose2motion::motion::RootTransform;
use pose2motion::rotation::{axis_angle, matrix_to_rot6d, rot6d_to_matrix, rot_y, Mat3, Rot6};
use pose2motion::skeleton::Joint;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

type M4 = [[f64; 4]; 4];

fn decode(r: &Rot6) -> Mat3 {
    let n = |v: [f64; 3]| {
        let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / l, v[1] / l, v[2] / l]
    };
    let b1 = n([r[0], r[1], r[2]]);
    let a2 = [r[3], r[4], r[5]];
    let d = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
    let b2 = n([a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]]);
    let b3 = [b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2], b1[0] * b2[1] - b1[1] * b2[0]];
    [[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]]
}

fn homog(r: &Mat3, t: [f64; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn mul4(a: &M4, b: &M4) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

const I3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Per frame, per joint world transforms from an explicit matrix stack.
fn oracle_transforms(s: &Skeleton, m: &Motion) -> Vec<Vec<M4>> {
    let mut x = [0.0; 3];
    m.frames
        .iter()
        .map(|f| {
            let root = homog(&decode(&f.root.orientation), x);
            for c in 0..3 {
                x[c] += f.root.velocity[c];
            }
            let mut out: Vec<M4> = Vec::new();
            for (j, joint) in s.joints().iter().enumerate() {
                let parent = joint.parent.map_or(root, |p| out[p]);
                let local = mul4(&homog(&I3, joint.offset), &homog(&decode(&f.pose.rotations[j]), [0.0; 3]));
                out.push(mul4(&parent, &local));
            }
            out
        })
        .collect()
}

fn oracle_root_relative(s: &Skeleton, a: &Motion, b: &Motion) -> f64 {
    let feats = |m: &Motion| -> Vec<f64> {
        oracle_transforms(s, m)
            .iter()
            .flat_map(|ts| {
                let r = ts[0];
                ts.iter()
                    .flat_map(move |t| {
                        let d = [t[0][3] - r[0][3], t[1][3] - r[1][3], t[2][3] - r[2][3]];
                        (0..3).map(move |c| (r[0][c] * d[0] + r[1][c] * d[1] + r[2][c] * d[2]) / s.height())
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let (fa, fb) = (feats(a), feats(b));
    1000.0 * fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / fa.len() as f64
}

fn oracle_global(s: &Skeleton, a: &Motion, b: &Motion) -> f64 {
    let feats = |m: &Motion| -> Vec<f64> {
        oracle_transforms(s, m)
            .iter()
            .flat_map(|ts| {
                ts.iter().flat_map(|t| (0..3).map(|c| (t[c][3] + m.origin[c]) / s.height())).collect::<Vec<_>>()
            })
            .collect()
    };
    let (fa, fb) = (feats(a), feats(b));
    1000.0 * fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / fa.len() as f64
}

fn quaternion(m: &Mat3) -> [f64; 4] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

fn oracle_angle(a: &Motion, b: &Motion) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (ra, rb) in fa.pose.rotations.iter().zip(&fb.pose.rotations) {
            let (qa, qb) = (quaternion(&decode(ra)), quaternion(&decode(rb)));
            let d: f64 = qa.iter().zip(&qb).map(|(x, y)| x * y).sum();
            sum += 2.0 * d.abs().min(1.0).acos().to_degrees();
            n += 1.0;
        }
    }
    sum / n
}

fn oracle_jitter(s: &Skeleton, m: &Motion) -> f64 {
    let ts = oracle_transforms(s, m);
    let mut sum = 0.0;
    let mut n = 0.0;
    for t in 0..ts.len() - 3 {
        for j in 0..s.joint_count() {
            let p = |k: usize, c: usize| ts[t + k][j][c][3];
            let d: f64 = (0..3).map(|c| (p(3, c) - 3.0 * p(2, c) + 3.0 * p(1, c) - p(0, c)).powi(2)).sum();
            sum += d.sqrt();
            n += 1.0;
        }
    }
    100.0 * sum / (n * s.height())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

#[test]
fn metrics_match_oracles_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let j = rng.gen_range(2..9);
        let t = rng.gen_range(4..9);
        let s = random_skeleton(&mut rng, j);
        let (a, mut b) = (random_motion(&mut rng, j, t), random_motion(&mut rng, j, t));
        b.origin = [rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(-1.0..1.0)];
        assert!((joint_angle_error(&s, &a, &b).unwrap() - oracle_angle(&a, &b)).abs() < 1e-9);
        assert!(rel(root_relative_pos_error(&s, &a, &b).unwrap(), oracle_root_relative(&s, &a, &b)) < 1e-9);
        assert!(rel(global_pos_error(&s, &a, &b).unwrap(), oracle_global(&s, &a, &b)) < 1e-9);
        assert!(rel(jitter(&s, &a).unwrap(), oracle_jitter(&s, &a)) < 1e-9);
    }
}

#[test]
fn self_comparison_is_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s = random_skeleton(&mut rng, 6);
    let m = random_motion(&mut rng, 6, 7);
    assert_eq!(joint_angle_error(&s, &m, &m).unwrap(), 0.0);
    assert_eq!(root_relative_pos_error(&s, &m, &m).unwrap(), 0.0);
    assert_eq!(global_pos_error(&s, &m, &m).unwrap(), 0.0);
}

#[test]
fn quarter_turn_on_one_joint() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let s = random_skeleton(&mut rng, 5);
    let a = random_motion(&mut rng, 5, 6);
    let mut b = a.clone();
    let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    for f in &mut b.frames {
        let r = rot6d_to_matrix(&f.pose.rotations[2]).unwrap();
        f.pose.rotations[2] =
            matrix_to_rot6d(&pose2motion::rotation::mat_mul(&r, &axis_angle(axis, 90f64.to_radians()))).unwrap();
    }
    assert!((joint_angle_error(&s, &b, &a).unwrap() - 90.0 / 5.0).abs() < 1e-9);
}

#[test]
fn root_frame_removes_rigid_root_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let s = random_skeleton(&mut rng, 6);
    let a = random_motion(&mut rng, 6, 8);
    let mut b = a.clone();
    let q = random_rotation(&mut rng);
    for f in &mut b.frames {
        let r = rot6d_to_matrix(&f.root.orientation).unwrap();
        f.root.orientation = matrix_to_rot6d(&pose2motion::rotation::mat_mul(&q, &r)).unwrap();
        f.root.velocity = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    }
    b.origin = [3.0, -1.0, 2.0];
    assert!(root_relative_pos_error(&s, &a, &b).unwrap() < 1e-20);
    assert!(global_pos_error(&s, &a, &b).unwrap() > 1e-3);
}

#[test]
fn constant_offset_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let s = random_skeleton(&mut rng, 4).normalized().unwrap();
    let a = random_motion(&mut rng, 4, 5);
    let mut b = a.clone();
    let c = [0.03, -0.02, 0.01];
    b.origin = c;
    let expect = 1000.0 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) / 3.0;
    let got = global_pos_error(&s, &a, &b).unwrap();
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    assert!((got - oracle_global(&s, &a, &b)).abs() < 1e-9);
    assert!(root_relative_pos_error(&s, &a, &b).unwrap() < 1e-20);
}

fn root_path(positions: &[[f64; 3]]) -> Motion {
    let frames = positions
        .windows(2)
        .map(|w| Frame {
            pose: Pose::identity(2),
            root: RootTransform { velocity: sub(w[1], w[0]), ..Default::default() },
        })
        .collect();
    Motion::new(frames, 30.0).unwrap()
}

fn stick() -> Skeleton {
    Skeleton::new(
        vec![Joint::new("hips", None, [0.0, 1.0, 0.0]), Joint::new("foot", Some(0), [0.0, -1.0, 0.0])],
        None,
        None,
    )
    .unwrap()
}

#[test]
fn jitter_vanishes_on_quadratics_and_is_exact_on_cubics() {
    let s = stick();
    let h = s.height();
    for (a, b, c) in [(0.0, 0.0, 0.3), (0.0, 0.02, 0.1), (0.004, -0.01, 0.0)] {
        let p: Vec<[f64; 3]> =
            (0..12).map(|t| t as f64).map(|t| [a * t * t + b * t + c, 0.5 * a * t * t, 0.0]).collect();
        assert!(jitter(&s, &root_path(&p)).unwrap() < 1e-12);
    }
    let a = 0.001;
    let p: Vec<[f64; 3]> = (0..12).map(|t| [0.0, 0.0, a * (t as f64).powi(3)]).collect();
    let got = jitter(&s, &root_path(&p)).unwrap();
    assert!((got - 100.0 * 6.0 * a / h).abs() < 1e-9, "{got}");
    assert!(matches!(jitter(&s, &Motion::identity(2, 3, 30.0)), Err(Error::TooShort { .. })));
}

#[test]
fn contact_consistency_limits() {
    let s = stick().with_sets(vec![1], vec![1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let p: Vec<[f64; 3]> = (0..20).map(|t| [if t % 5 < 2 { 0.0 } else { rng.gen_range(0.0..0.1) }, 0.0, 0.0]).collect();
    let m = root_path(&p);
    assert_eq!(contact_consistency(&s, &m, &s, &m, &[(1, 1)], 0.006).unwrap(), 1.0);
    let labels = contact_labels(&forward_kinematics_full(&s, &m).unwrap().0, &[1], 0.006).unwrap();
    let flipped = ContactLabels::from_data(labels.frames(), 1, labels.data().iter().map(|b| !b).collect()).unwrap();
    assert_eq!(label_agreement(&labels, &flipped).unwrap(), 0.0);
    assert!(contact_consistency(&s, &m, &s, &m, &[], 0.006).is_err());
    assert!(contact_consistency(&s, &m, &s, &m.slice(0, 10), &[(1, 1)], 0.006).is_err());
}

fn random_poses(rng: &mut ChaCha8Rng, j: usize, n: usize) -> Vec<Pose> {
    (0..n)
        .map(|_| Pose { rotations: (0..j).map(|_| matrix_to_rot6d(&random_rotation(rng)).unwrap()).collect() })
        .collect()
}

#[test]
fn precision_recall_matches_quadratic_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let s = random_skeleton(&mut rng, 5);
    let (a, b) = (random_poses(&mut rng, 5, 10), random_poses(&mut rng, 5, 10));
    let curve = precision_recall(&s, &a, &b).unwrap();
    for (k, &e) in curve.thresholds.iter().enumerate() {
        let covered = |from: &[Pose], to: &[Pose]| {
            let mut hit = 0;
            for p in from {
                let mut best = f64::INFINITY;
                for q in to {
                    best = best.min(pose_distance(&s, p, q).unwrap());
                }
                if best <= e {
                    hit += 1;
                }
            }
            hit as f64 / from.len() as f64
        };
        assert_eq!(curve.precision[k], covered(&a, &b));
        assert_eq!(curve.recall[k], covered(&b, &a));
    }
    assert_eq!(curve.thresholds.len(), PR_GRID_POINTS);
    assert_eq!(*curve.precision.last().unwrap(), 1.0);
}

#[test]
fn identical_sets_are_fully_covered() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let s = random_skeleton(&mut rng, 4);
    let a = random_poses(&mut rng, 4, 7);
    let c = precision_recall(&s, &a, &a).unwrap();
    assert!(c.precision.iter().chain(&c.recall).all(|&v| v == 1.0));
}

#[test]
fn far_sets_score_zero_on_a_tight_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let s = random_skeleton(&mut rng, 4);
    let a = vec![Pose::identity(4); 3];
    let half = matrix_to_rot6d(&rot_y(180.0)).unwrap();
    let mut far = Pose::identity(4);
    far.rotations[0] = matrix_to_rot6d(&pose2motion::rotation::rot_x(180.0)).unwrap();
    far.rotations[1] = half;
    let b = vec![far; 4];
    let nd = nearest_distances(&s, &a, &b).unwrap();
    let grid: Vec<f64> = (1..=8).map(|i| i as f64 * 1e-6).collect();
    let c = precision_recall_on(&nd, &grid).unwrap();
    assert!(nd.0.iter().all(|&d| d > 1e-3));
    assert!(c.precision.iter().chain(&c.recall).all(|&v| v == 0.0));
    assert!(precision_recall(&s, &[], &b).is_err());
}

#[test]
fn subsampling_is_seeded_and_capped() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let a = random_poses(&mut rng, 2, 20);
    assert_eq!(subsample_poses(&a, 50, 1), a);
    let x = subsample_poses(&a, 5, 1);
    assert_eq!(x.len(), 5);
    assert_eq!(x, subsample_poses(&a, 5, 1));
}

#[test]
fn frame_copy_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let s = random_skeleton(&mut rng, 4);
    let m = random_motion(&mut rng, 4, 6);
    let same = baseline_frame_copy(&s, &m, &s, |p| Ok(p.to_vec())).unwrap();
    assert_eq!(same, m);
    let big = s.scaled(2.0).unwrap();
    let out = baseline_frame_copy(&s, &m, &big, |p| Ok(p.to_vec())).unwrap();
    let (a, b) = (m.root_positions(), out.root_positions());
    for (x, y) in a.iter().zip(&b) {
        for c in 0..3 {
            assert!((2.0 * x[c] - y[c]).abs() < 1e-12);
        }
    }
    for (f, g) in m.frames.iter().zip(&out.frames) {
        assert_eq!(f.root.orientation, g.root.orientation);
    }
    assert!(baseline_frame_copy(&s, &m, &s, |p| Ok(p[1..].to_vec())).is_err());
}

#[test]
fn report_means_are_frame_weighted() {
    let clip = |n: &str, frames, v: f64| ClipMetrics {
        clip: n.into(),
        frames,
        joint_angle: Some(v),
        root_relative: Some(v),
        global: None,
        jitter: Some(v),
        contact: Some(v / 10.0),
    };
    let r = MetricReport::new(vec![clip("a", 10, 1.0), clip("b", 30, 3.0)]);
    assert_eq!(r.mean.joint_angle, Some(2.5));
    assert_eq!(r.mean_per_clip.joint_angle, Some(2.0));
    assert_eq!(r.mean.global, None);
    assert_eq!((r.clip_count, r.frame_count), (2, 40));
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER);
    assert_eq!(lines[1], "a,10,1,1,,1,0.1");
    assert_eq!(lines[3], "mean,40,2.5,2.5,,2.5,0.25");
    let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn evaluate_against_truth_of_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let s = random_skeleton(&mut rng, 5);
    let leaf = (0..5).find(|&j| s.children(j).is_empty()).unwrap();
    let s = s.with_sets(vec![leaf], vec![leaf]).unwrap();
    let m = random_motion(&mut rng, 5, 6);
    let c = evaluate_clip("x", &s, &m, Reference::Truth(&m), 0.006).unwrap();
    assert_eq!([c.joint_angle, c.root_relative, c.global], [Some(0.0); 3]);
    assert_eq!(c.contact, Some(1.0));
    assert!(c.jitter.unwrap() > 0.0);
}

proptest! {
    #[test]
    fn curves_are_monotone(seed in 0u64..1000, n in 1usize..6, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_skeleton(&mut rng, 3);
        let (a, b) = (random_poses(&mut rng, 3, n), random_poses(&mut rng, 3, k));
        let c = precision_recall(&s, &a, &b).unwrap();
        for v in [&c.precision, &c.recall] {
            prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn quadratic_root_paths_have_no_jitter(a in -0.01f64..0.01, b in -0.1f64..0.1, c in -1.0f64..1.0) {
        let p: Vec<[f64; 3]> = (0..10).map(|t| t as f64).map(|t| [a * t * t, b * t + c, a * t * t + b * t]).collect();
        prop_assert!(jitter(&stick(), &root_path(&p)).unwrap() < 1e-10);
    }
}
