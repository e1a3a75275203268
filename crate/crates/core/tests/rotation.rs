use pose2motion::autodiff::Graph;
use pose2motion::autodiff::{gradient_check, Array};
use pose2motion::rotation::*;
use proptest::prelude::*;

fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
    a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn identity_cases() {
    assert_eq!(rot6d_to_matrix(&IDENTITY_6D).unwrap(), IDENTITY);
    assert_eq!(rot6d_to_matrix(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap(), IDENTITY);
    assert_eq!(matrix_to_rot6d(&IDENTITY).unwrap(), IDENTITY_6D);
}

#[test]
fn quarter_turn_about_z() {
    let r = matrix_to_rot6d(&rot_z(90.0)).unwrap();
    let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
    for (a, b) in r.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    assert_eq!(rot6d_to_matrix(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]), Err(RotationError::ZeroFirst));
    assert_eq!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]), Err(RotationError::Parallel));
    assert_eq!(rot6d_to_matrix(&[f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]), Err(RotationError::NonFinite));
    let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(matches!(matrix_to_rot6d(&skew), Err(RotationError::NotOrthonormal(_))));
}

#[test]
fn axis_angle_matches_elementary_rotations() {
    assert!(close(&axis_angle([0.0, 0.0, 1.0], 0.7), &rot_z(0.7f64.to_degrees()), 1e-14));
    assert!(close(&axis_angle([1.0, 0.0, 0.0], -1.2), &rot_x(-1.2f64.to_degrees()), 1e-14));
    assert!(close(&axis_angle([0.0, 2.0, 0.0], 2.5), &rot_y(2.5f64.to_degrees()), 1e-14));
}

#[test]
fn euler_zyx_round_trip() {
    for &(a, b, c) in &[(10.0, 20.0, 30.0), (-170.0, 45.0, 179.0), (0.0, -89.0, 5.0)] {
        let m = euler_to_matrix([Axis::Z, Axis::Y, Axis::X], [a, b, c]);
        let e = matrix_to_euler_zyx(&m);
        let back = euler_to_matrix([Axis::Z, Axis::Y, Axis::X], e);
        assert!(close(&m, &back, 1e-12));
    }
    let gimbal = euler_to_matrix([Axis::Z, Axis::Y, Axis::X], [30.0, 90.0, 10.0]);
    let back = euler_to_matrix([Axis::Z, Axis::Y, Axis::X], matrix_to_euler_zyx(&gimbal));
    assert!(close(&gimbal, &back, 1e-9));
}

#[test]
fn graph_version_matches_values() {
    let rows = [[0.3, -1.0, 0.2, 0.5, 0.4, -0.9], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]];
    let mut g = Graph::new();
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let x = g.constant(Array::new(vec![2, 6], data).unwrap());
    let m = rot6d_to_matrix_graph(&mut g, x).unwrap();
    let v = g.value(m).data();
    for (n, r) in rows.iter().enumerate() {
        let expect = rot6d_to_matrix(r).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((v[n * 9 + i * 3 + j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn rot6d_composed_with_norm_gradient() {
    let input = Array::new(
        vec![3, 6],
        vec![0.3, -1.0, 0.2, 0.5, 0.4, -0.9, 1.2, 0.1, 0.0, -0.3, 0.8, 0.2, -0.5, 0.5, 0.7, 1.0, 0.3, -0.4],
    )
    .unwrap();
    let report = gradient_check(
        |g, ids| {
            let m = rot6d_to_matrix_graph(g, ids[0])?;
            let w = g.constant(Array::new(vec![3, 3, 3], (0..27).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
            let p = g.mul(m, w)?;
            let p = g.reshape(p, &[9, 3])?;
            let n = g.norm2(p)?;
            Ok(g.sum(n))
        },
        &[input],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

proptest! {
    #[test]
    fn orthonormal_for_random_inputs(r in prop::array::uniform6(-5.0f64..5.0)) {
        match rot6d_to_matrix(&r) {
            Ok(m) => {
                prop_assert!(orthonormality_error(&m) < 1e-6);
                prop_assert!((det(&m) - 1.0).abs() < 1e-6);
            }
            Err(e) => prop_assert!(matches!(e, RotationError::ZeroFirst | RotationError::Parallel)),
        }
    }

    #[test]
    fn axis_angle_round_trip(axis in prop::array::uniform3(-1.0f64..1.0), angle in -3.1f64..3.1) {
        prop_assume!(norm(axis) > 1e-3);
        let m = axis_angle(axis, angle);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&m).unwrap()).unwrap();
        prop_assert!(close(&m, &back, 1e-6));
        prop_assert!((geodesic_angle(&IDENTITY, &m) - angle.abs()).abs() < 1e-6);
    }
}
