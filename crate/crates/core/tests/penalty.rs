use pose2motion::autodiff::gradient_check;
use pose2motion::autodiff::{Array, DiffError, Graph, NodeId};
use pose2motion::training::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear_penalty(scale: f64) -> f64 {
    let mut g = Graph::new();
    let w = Array::new(vec![3, 1], vec![0.6 * scale, 0.0, 0.8 * scale]).unwrap();
    let w = g.variable(w);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let real = Array::new(vec![4, 3], (0..12).map(|i| i as f64).collect()).unwrap();
    let fake = Array::new(vec![4, 3], (0..12).map(|i| -(i as f64)).collect()).unwrap();
    let xh = g.constant(interpolate(&real, &fake, &mut rng).unwrap());
    let s = g.matmul(xh, w).unwrap();
    let s = g.sum(s);
    let p = gradient_penalty(&mut g, xh, &[PenaltyHead { output: s, block: 3, weight: 1.0 }]).unwrap();
    g.value(p).item()
}

#[test]
fn unit_linear_critic_has_no_penalty() {
    assert!(linear_penalty(1.0).abs() < 1e-15);
}

#[test]
fn doubled_linear_critic_has_unit_penalty() {
    assert!((linear_penalty(2.0) - 1.0).abs() < 1e-12);
}

#[test]
fn interpolates_lie_between_endpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let real = Array::full(&[5, 2], 1.0);
    let fake = Array::full(&[5, 2], 3.0);
    let x = interpolate(&real, &fake, &mut rng).unwrap();
    for row in x.data().chunks(2) {
        assert_eq!(row[0], row[1]);
        assert!((1.0..=3.0).contains(&row[0]));
    }
    assert!(interpolate(&real, &Array::zeros(&[4, 2]), &mut rng).is_err());
}

fn small_critic(g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId, DiffError> {
    let h = g.matmul(x, ids[0])?;
    let h = g.leaky_relu(h, 0.2);
    let sq = g.square(h);
    let h = g.add(h, sq)?;
    let y = g.matmul(h, ids[1])?;
    Ok(g.sum(y))
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand = |shape: &[usize]| {
        let n = shape.iter().product();
        Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let x = rand(&[5, 4]);
    let w1 = rand(&[4, 6]);
    let w2 = rand(&[6, 1]);
    let f = |g: &mut Graph, ids: &[NodeId]| {
        let xh = g.constant(x.clone());
        let s = small_critic(g, ids, xh)?;
        gradient_penalty(
            g,
            xh,
            &[PenaltyHead { output: s, block: 2, weight: 0.7 }, PenaltyHead { output: s, block: 4, weight: 0.3 }],
        )
    };
    let rep = gradient_check(f, &[w1, w2], 1e-6).unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    // The by-value input gradient used for the norms agrees with differencing the critic.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rand = |shape: &[usize]| {
        let n = shape.iter().product();
        Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let (x, w1, w2) = (rand(&[3, 4]), rand(&[4, 5]), rand(&[5, 1]));
    let score = |x: &Array| {
        let mut g = Graph::new();
        let ids = [g.constant(w1.clone()), g.constant(w2.clone())];
        let xi = g.constant(x.clone());
        let s = small_critic(&mut g, &ids, xi).unwrap();
        g.value(s).item()
    };
    let mut g = Graph::new();
    let ids = [g.constant(w1.clone()), g.constant(w2.clone())];
    let xi = g.constant(x.clone());
    let s = small_critic(&mut g, &ids, xi).unwrap();
    let grad = g.gradients(s, &[xi]).unwrap().remove(0);
    let h = 1e-6;
    for k in 0..x.len() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p.data_mut()[k] += h;
        m.data_mut()[k] -= h;
        let fd = (score(&p) - score(&m)) / (2.0 * h);
        assert!((fd - grad.data()[k]).abs() < 1e-3);
    }
}
