use pose2motion::error::Error;
use pose2motion::fixtures::*;
use pose2motion::motion::{contact_labels, forward_kinematics, joint_velocities};
use pose2motion::rotation::norm;

#[test]
fn default_spec_echo() {
    let c = generate_fixture_corpus(&FixtureSpec::default(), 1).unwrap();
    let (s, t) = (&c.source[0].skeleton, &c.target[0].skeleton);
    assert_eq!(s.joint_count(), 8);
    assert_eq!(t.joint_count(), 12);
    assert_eq!(s.end_effectors().len(), 5);
    assert_eq!(t.end_effectors().len(), 5);
    assert_eq!(s.end_effector_names(), t.end_effector_names());
    assert_eq!(s.feet().len(), 2);
    let poses: usize = c.target.iter().map(|c| c.motion.len()).sum();
    assert_eq!(poses, 600);
}

#[test]
fn non_homeomorphic_spec_is_rejected() {
    let spec = FixtureSpec { target: FixtureSkeleton::Biped11, ..Default::default() };
    assert!(matches!(generate_fixture_corpus(&spec, 1), Err(Error::Config(_))));
}

#[test]
fn planted_feet_do_not_move() {
    let c = generate_fixture_corpus(&FixtureSpec::default(), 7).unwrap();
    for clip in c.source.iter().chain(&c.target) {
        let p = forward_kinematics(&clip.skeleton, &clip.motion).unwrap();
        let v = joint_velocities(&p).unwrap();
        let labels = contact_labels(&p, clip.skeleton.feet(), 0.006).unwrap();
        let mut planted = 0;
        for (t, row) in clip.planted.iter().enumerate() {
            for (k, &f) in clip.skeleton.feet().iter().enumerate() {
                if row[k] {
                    planted += 1;
                    assert!(norm(v.get(t, f)) < 1e-8, "{} t={t} foot={f}", clip.name);
                    assert!(labels.get(t, k));
                }
            }
        }
        assert!(planted > clip.motion.len() / 2, "{}: {planted}", clip.name);
        // The ground is never penetrated.
        for t in 0..p.frames() {
            for &f in clip.skeleton.feet() {
                assert!(p.get(t, f)[1] + clip.motion.origin[1] > -1e-9, "{} t={t}", clip.name);
            }
        }
    }
}

#[test]
fn swing_feet_move() {
    let c = generate_fixture_corpus(&FixtureSpec::default(), 7).unwrap();
    let clip = &c.source[0];
    let p = forward_kinematics(&clip.skeleton, &clip.motion).unwrap();
    let labels = contact_labels(&p, clip.skeleton.feet(), 0.006).unwrap();
    let moving = labels.data().iter().filter(|&&b| !b).count();
    assert!(moving > labels.data().len() / 4);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = generate_fixture_corpus(&FixtureSpec::default(), 3).unwrap();
    let b = generate_fixture_corpus(&FixtureSpec::default(), 3).unwrap();
    let c = generate_fixture_corpus(&FixtureSpec::default(), 4).unwrap();
    for (x, y) in a.source.iter().zip(&b.source) {
        assert_eq!(x.bvh().unwrap(), y.bvh().unwrap());
    }
    assert_ne!(a.source[0].bvh().unwrap(), c.source[0].bvh().unwrap());
}
