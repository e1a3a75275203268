//! Random skeletons and motions shared by the unit suites.

use pose2motion::motion::{Frame, Motion, Pose, RootTransform};
use pose2motion::rotation::{axis_angle, matrix_to_rot6d, Mat3};
use pose2motion::skeleton::{Joint, Skeleton};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_skeleton(rng: &mut ChaCha8Rng, joints: usize) -> Skeleton {
    let mut js = vec![Joint::new("j0", None, [rng.gen_range(-1.0..1.0), rng.gen_range(0.5..1.0), 0.0])];
    for i in 1..joints {
        let p = rng.gen_range(0..i);
        js.push(Joint::new(
            format!("j{i}"),
            Some(p),
            [rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0), rng.gen_range(-1.0..1.0)],
        ));
    }
    Skeleton::new(js, None, None).unwrap()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    axis_angle(axis, rng.gen_range(-3.0..3.0))
}

pub fn random_motion(rng: &mut ChaCha8Rng, joints: usize, frames: usize) -> Motion {
    let frames = (0..frames)
        .map(|_| Frame {
            pose: Pose { rotations: (0..joints).map(|_| matrix_to_rot6d(&random_rotation(rng)).unwrap()).collect() },
            root: RootTransform {
                orientation: matrix_to_rot6d(&random_rotation(rng)).unwrap(),
                velocity: [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)],
            },
        })
        .collect();
    Motion::new(frames, 30.0).unwrap()
}
