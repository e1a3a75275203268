use std::cell::Cell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pose2motion::autodiff::*;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    // Keep magnitudes away from zero so leaky-relu kinks are not straddled by ±h.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Reduces any node to a scalar through a fixed random weighting, so every
/// output entry contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: NodeId, seed: u64) -> Result<NodeId, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_array(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check_op<F>(name: &str, shapes: &[Vec<usize>], build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial * 7919 + 3);
        let inputs: Vec<Array> = shapes.iter().map(|s| rand_array(&mut rng, s)).collect();
        let report = gradient_check(
            |g, ids| {
                let y = build(g, ids)?;
                weighted_sum(g, y, trial)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{name} trial {trial}: {report:?}");
    }
}

/// Checks `jvp` against a central difference along a random direction.
fn check_jvp<F>(name: &str, shapes: &[Vec<usize>], build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial + 100);
        let inputs: Vec<Array> = shapes.iter().map(|s| rand_array(&mut rng, s)).collect();
        let dirs: Vec<Array> = shapes.iter().map(|s| rand_array(&mut rng, s)).collect();
        let scalar = |xs: &[Array]| -> f64 {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = xs.iter().map(|a| g.constant(a.clone())).collect();
            let y = build(&mut g, &ids).unwrap();
            let s = weighted_sum(&mut g, y, trial).unwrap();
            g.value(s).item()
        };
        let h = 1e-6;
        let shifted = |sign: f64| -> Vec<Array> {
            inputs
                .iter()
                .zip(&dirs)
                .map(|(x, d)| {
                    let data = x.data().iter().zip(d.data()).map(|(a, b)| a + sign * h * b).collect();
                    Array::new(x.shape().to_vec(), data).unwrap()
                })
                .collect()
        };
        let numeric = (scalar(&shifted(1.0)) - scalar(&shifted(-1.0))) / (2.0 * h);

        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|a| g.constant(a.clone())).collect();
        let y = build(&mut g, &ids).unwrap();
        let s = weighted_sum(&mut g, y, trial).unwrap();
        let seeds: Vec<(NodeId, NodeId)> = ids.iter().zip(&dirs).map(|(id, d)| (*id, g.constant(d.clone()))).collect();
        let t = g.jvp(s, &seeds).unwrap().unwrap();
        let analytic = g.value(t).item();
        let rel = (analytic - numeric).abs() / 1f64.max(analytic.abs());
        assert!(rel < 1e-6, "{name} jvp trial {trial}: {analytic} vs {numeric}");
    }
}

fn check_both<F>(name: &str, shapes: &[Vec<usize>], build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    check_op(name, shapes, &build);
    check_jvp(name, shapes, &build);
}

#[test]
fn add_example() {
    let mut g = Graph::new();
    let a = g.variable(Array::from_vec(vec![1.0, 2.0]));
    let b = g.variable(Array::from_vec(vec![3.0, 4.0]));
    let y = g.add(a, b).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, 6.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[1.0, 1.0]);
    assert_eq!(g.grad(b).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn matmul_identity_and_sum_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = rand_array(&mut rng, &[3, 3]);
    let mut eye = Array::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 4] = 1.0;
    }
    let mut g = Graph::new();
    let i_id = g.constant(eye);
    let r_id = g.constant(r.clone());
    let p = g.matmul(i_id, r_id).unwrap();
    assert_eq!(g.value(p), &r);

    let a = rand_array(&mut rng, &[2, 3]);
    let b = rand_array(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let a_id = g.variable(a);
    let b_id = g.constant(b.clone());
    let p = g.matmul(a_id, b_id).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    let grad = g.grad(a_id).unwrap();
    for i in 0..2 {
        for k in 0..3 {
            let expect: f64 = b.data()[k * 4..k * 4 + 4].iter().sum();
            assert!((grad.data()[i * 3 + k] - expect).abs() < 1e-12);
        }
    }
    let report = gradient_check(
        |g, ids| {
            let p = g.matmul(ids[0], ids[1])?;
            Ok(g.sum(p))
        },
        &[rand_array(&mut rng, &[2, 3]), b],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-8);
}

#[test]
fn normalize_three_four_five() {
    let mut g = Graph::new();
    let x = g.constant(Array::from_vec(vec![3.0, 4.0]));
    let y = g.normalize(x).unwrap();
    let v = g.value(y).data();
    assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
}

#[test]
fn normalize_rejects_zero_rows() {
    let mut g = Graph::new();
    let x = g.constant(Array::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
    assert_eq!(g.normalize(x).unwrap_err(), DiffError::Degenerate { op: "normalize", row: 1 });
}

#[test]
fn sum_and_square_gradients() {
    let x = Array::from_vec(vec![0.5, -2.0, 3.0]);
    let mut g = Graph::new();
    let id = g.variable(x.clone());
    let s = g.sum(id);
    g.backward(s).unwrap();
    assert_eq!(g.grad(id).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let id = g.variable(x.clone());
    let sq = g.square(id);
    let s = g.sum(sq);
    g.backward(s).unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.grad(id).unwrap().data(), expect.as_slice());
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let x = g.variable(Array::from_vec(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(DiffError::NonScalarOutput(_))));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.backward(s), Err(DiffError::BackwardRepeated));
    g.reset_grads();
    g.backward(s).unwrap();
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Array::zeros(&[2, 3]));
    let b = g.constant(Array::zeros(&[4, 2]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    assert!(g.add(a, b).is_err());
}

#[test]
fn backward_visits_each_node_once() {
    let mut g = Graph::new();
    let x = g.variable(Array::from_vec(vec![1.0, 2.0, 3.0]));
    let a = g.square(x);
    let b = g.add(a, x).unwrap();
    let c = g.mul(b, a).unwrap();
    let d = g.add(c, b).unwrap();
    let s = g.sum(d);
    let before = g.backward_visits();
    g.backward(s).unwrap();
    // x, a, b, c, d, s
    assert_eq!(g.backward_visits() - before, 6);
}

#[test]
fn gradients_do_not_touch_stored_state() {
    let mut g = Graph::new();
    let x = g.variable(Array::from_vec(vec![1.0, 2.0]));
    let w = g.variable(Array::from_vec(vec![3.0, 5.0]));
    let p = g.mul(x, w).unwrap();
    let s = g.sum(p);
    let gx = g.gradients(s, &[x]).unwrap();
    assert_eq!(gx[0].data(), &[3.0, 5.0]);
    assert!(g.grad(x).is_none());
    g.backward(s).unwrap();
    assert_eq!(g.grad(w).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn gradient_check_linear_is_exact() {
    let report = gradient_check(
        |g, ids| {
            let c = g.constant(Array::from_vec(vec![2.0, -3.0, 0.5]));
            let p = g.mul(ids[0], c)?;
            Ok(g.sum(p))
        },
        &[Array::from_vec(vec![0.3, 0.7, -1.1])],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-10, "{report:?}");
}

#[test]
fn gradient_check_detects_nondeterminism() {
    let counter = Cell::new(0.0);
    let err = gradient_check(
        |g, ids| {
            counter.set(counter.get() + 1.0);
            let s = g.sum(ids[0]);
            let c = g.constant(Array::scalar(counter.get()));
            g.add(s, c)
        },
        &[Array::from_vec(vec![1.0])],
        1e-5,
    )
    .unwrap_err();
    assert!(matches!(err, DiffError::NonDeterministic { .. }));
}

#[test]
fn elementwise_ops() {
    let s = vec![vec![3, 4], vec![3, 4]];
    check_both("add", &s, |g, x| g.add(x[0], x[1]));
    check_both("sub", &s, |g, x| g.sub(x[0], x[1]));
    check_both("mul", &s, |g, x| g.mul(x[0], x[1]));
    check_both("mul_scalar", &[vec![3, 4], vec![]], |g, x| g.mul(x[0], x[1]));
    check_both("scale", &[vec![5]], |g, x| Ok(g.scale(x[0], -2.5)));
    check_both("recip", &[vec![6]], |g, x| Ok(g.recip(x[0])));
    check_both("leaky_relu", &[vec![2, 7]], |g, x| Ok(g.leaky_relu(x[0], 0.2)));
}

#[test]
fn linear_algebra_ops() {
    check_both("matmul", &[vec![3, 4], vec![4, 2]], |g, x| g.matmul(x[0], x[1]));
    check_both("bmm", &[vec![5, 3, 3], vec![5, 3, 2]], |g, x| g.matmul(x[0], x[1]));
    check_both("cross", &[vec![4, 3], vec![4, 3]], |g, x| g.cross(x[0], x[1]));
    check_both("norm2", &[vec![4, 3]], |g, x| g.norm2(x[0]));
    check_both("normalize", &[vec![5, 3]], |g, x| g.normalize(x[0]));
}

#[test]
fn reduction_and_structure_ops() {
    check_both("sum", &[vec![3, 2]], |g, x| Ok(g.sum(x[0])));
    check_both("mean", &[vec![3, 2]], |g, x| Ok(g.mean(x[0])));
    check_both("sum_axis", &[vec![2, 3, 4]], |g, x| g.sum_axis(x[0], 1));
    check_both("concat", &[vec![2, 3], vec![2, 5]], |g, x| g.concat(&[x[0], x[1]], 1));
    check_both("slice", &[vec![4, 6]], |g, x| g.slice(x[0], 1, 2, 5));
    check_both("reshape", &[vec![4, 6]], |g, x| g.reshape(x[0], &[3, 8]));
    check_both("permute", &[vec![2, 3, 4]], |g, x| g.permute(x[0], &[2, 0, 1]));
    check_both("broadcast_last", &[vec![2, 3]], |g, x| Ok(g.broadcast_last(x[0], 4)));
    check_both("cumsum", &[vec![2, 5, 3]], |g, x| g.cumsum(x[0], 1, true));
    check_both("cumsum_incl", &[vec![2, 5, 3]], |g, x| g.cumsum(x[0], 1, false));
}

#[test]
fn conv_ops() {
    check_both("conv", &[vec![2, 3, 9], vec![4, 3, 3], vec![4]], |g, x| {
        g.conv1d(x[0], x[1], Some(x[2]), 1, 1, 1, None)
    });
    check_both("conv_stride", &[vec![2, 2, 10], vec![3, 2, 5], vec![3]], |g, x| {
        g.conv1d(x[0], x[1], Some(x[2]), 2, 2, 1, None)
    });
    check_both("conv_short", &[vec![1, 2, 1], vec![3, 2, 5], vec![3]], |g, x| {
        g.conv1d(x[0], x[1], Some(x[2]), 1, 2, 1, None)
    });
    check_both("conv_short_stride", &[vec![1, 1, 2], vec![2, 1, 5], vec![2]], |g, x| {
        g.conv1d(x[0], x[1], Some(x[2]), 2, 2, 1, None)
    });
    check_both("conv_grouped", &[vec![1, 6, 7], vec![4, 3, 1]], |g, x| g.conv1d(x[0], x[1], None, 1, 0, 2, None));
    let mask: Arc<Vec<f64>> = Arc::new((0..24).map(|i| f64::from(i % 3 != 0)).collect());
    check_both("conv_masked", &[vec![2, 2, 8], vec![4, 2, 3]], move |g, x| {
        g.conv1d(x[0], x[1], None, 1, 1, 1, Some(mask.clone()))
    });
}

#[test]
fn masked_weights_receive_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = Arc::new(vec![1.0, 0.0, 1.0, 0.0]);
    let mut g = Graph::new();
    let x = g.constant(rand_array(&mut rng, &[1, 2, 5]));
    let w = g.variable(rand_array(&mut rng, &[2, 2, 1]));
    let y = g.conv1d(x, w, None, 1, 0, 1, Some(mask)).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let gw = g.grad(w).unwrap().data();
    assert_eq!(gw[1], 0.0);
    assert_eq!(gw[3], 0.0);
    assert!(gw[0] != 0.0);
}

#[test]
fn conv_output_length() {
    let mut g = Graph::new();
    for t in [7usize, 8, 9, 16, 17] {
        let x = g.constant(Array::zeros(&[1, 1, t]));
        let w = g.constant(Array::zeros(&[1, 1, 5]));
        let y = g.conv1d(x, w, None, 2, 2, 1, None).unwrap();
        assert_eq!(g.shape(y)[2], t.div_ceil(2));
    }
}

#[test]
fn rot6d_style_composition_gradient() {
    // Gram-Schmidt of two 3-vectors followed by a norm, as used for 6D rotations.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = rand_array(&mut rng, &[4, 6]);
    let report = gradient_check(
        |g, ids| {
            let a1 = g.slice(ids[0], 1, 0, 3)?;
            let a2 = g.slice(ids[0], 1, 3, 6)?;
            let b1 = g.normalize(a1)?;
            let d = g.mul(b1, a2)?;
            let d = g.sum_axis(d, 1)?;
            let d = g.broadcast_last(d, 3);
            let proj = g.mul(d, b1)?;
            let u = g.sub(a2, proj)?;
            let b2 = g.normalize(u)?;
            let b3 = g.cross(b1, b2)?;
            let m = g.concat(&[b1, b2, b3], 1)?;
            let n = g.norm2(m)?;
            weighted_sum(g, n, 4)
        },
        &[input],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}
