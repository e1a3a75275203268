use pose2motion::autodiff::{Array, Graph, ParamStore};
use pose2motion::nets::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chain(n: usize) -> SkeletalTopology {
    let names = (0..n).map(|i| format!("n{i}")).collect();
    let parents = (0..n).map(|i| i.checked_sub(1)).collect();
    SkeletalTopology::new(names, parents).unwrap()
}

fn spec(d: usize, k: usize) -> ConvSpec {
    ConvSpec { distance: Some(d), kernel: k, stride: 1, slope: 0.2, init_scale: 1.0 }
}

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn run(store: &ParamStore, conv: &SkeletalConv, x: &Array) -> Array {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xi = g.constant(x.clone());
    let y = conv.forward(&mut g, &p, xi).unwrap();
    g.value(y).clone()
}

#[test]
fn locality_under_perturbation() {
    let topo = chain(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let conv = SkeletalConv::new(&mut store, "c", &topo, &[2; 5], &[3; 5], spec(2, 3), &mut rng);
    let x = random_input(&mut rng, &[2, 10, 7]);
    let base = run(&store, &conv, &x);
    for k in 0..5 {
        let mut xp = x.clone();
        for b in 0..2 {
            for c in 2 * k..2 * k + 2 {
                for t in 0..7 {
                    xp.data_mut()[(b * 10 + c) * 7 + t] += 0.5;
                }
            }
        }
        let out = run(&store, &conv, &xp);
        for j in 0..5 {
            let changed = (0..2).any(|b| {
                (3 * j..3 * j + 3).any(|c| {
                    (0..7).any(|t| {
                        let i = (b * 15 + c) * 7 + t;
                        out.data()[i] != base.data()[i]
                    })
                })
            });
            assert_eq!(changed, topo.distance(j, k) <= 2, "joint {j} perturbed {k}");
        }
    }
}

#[test]
fn zero_weights_give_bias() {
    let topo = chain(3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let conv = SkeletalConv::new(&mut store, "c", &topo, &[1; 3], &[2; 3], spec(1, 5), &mut rng);
    store.get_mut(conv.weight).data_mut().fill(0.0);
    store.get_mut(conv.bias).data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let out = run(&store, &conv, &random_input(&mut rng, &[1, 3, 6]));
    for c in 0..6 {
        assert!(out.data()[c * 6..(c + 1) * 6].iter().all(|&v| v == (c + 1) as f64));
    }
}

#[test]
fn identity_kernel_at_radius_zero_is_per_joint_linear() {
    let topo = chain(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let conv = SkeletalConv::new(&mut store, "c", &topo, &[2; 3], &[2; 3], spec(0, 1), &mut rng);
    let x = random_input(&mut rng, &[1, 6, 4]);
    let out = run(&store, &conv, &x);
    let w = store.get(conv.weight).data().to_vec();
    for co in 0..6 {
        let node = co / 2;
        for t in 0..4 {
            let expect: f64 = (0..6).map(|ci| w[co * 6 + ci] * x.data()[ci * 4 + t]).sum();
            assert!((out.data()[co * 4 + t] - expect).abs() < 1e-14);
            for ci in 0..6 {
                if ci / 2 != node {
                    assert_eq!(w[co * 6 + ci], 0.0);
                }
            }
        }
    }
}

#[test]
fn init_bound_follows_masked_fan_in() {
    let topo = chain(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let conv = SkeletalConv::new(&mut store, "c", &topo, &[3; 4], &[1; 4], spec(1, 5), &mut rng);
    let w = store.get(conv.weight).data();
    // Node 0 sees nodes 0 and 1: fan-in 2·3·5.
    let bound = (6.0 / 1.04f64).sqrt() / 30f64.sqrt();
    assert!(w[..60].iter().all(|v| v.abs() <= bound));
    assert!(w[..60].iter().any(|v| v.abs() > 0.5 * bound));
    assert_eq!(store.get(conv.bias).data(), &[0.0; 4]);
}

#[test]
fn pool_means_and_unpool_copies() {
    let topo = chain(3);
    let p = Pooling::chains(&topo);
    let mut g = Graph::new();
    let x = g.constant(Array::new(vec![1, 3, 1], vec![1.0, 2.0, 6.0]).unwrap());
    let pooled = Resample::pool(&p, 1).forward(&mut g, x).unwrap();
    assert_eq!(g.value(pooled).data(), &[1.0, 4.0]);
    let back = Resample::unpool(&p, 1).forward(&mut g, pooled).unwrap();
    assert_eq!(g.value(back).data(), &[1.0, 4.0, 4.0]);
}

#[test]
fn affine_standardize_round_trip() {
    let (mean, std) = ([1.0, -2.0], [0.5, 4.0]);
    let mut g = Graph::new();
    let x = g.constant(Array::new(vec![1, 2, 2], vec![1.5, 0.0, 2.0, -2.0]).unwrap());
    let z = Affine::standardize(&mean, &std).forward(&mut g, x).unwrap();
    assert_eq!(g.value(z).data(), &[1.0, -2.0, 1.0, 0.0]);
    let back = Affine::restore(&mean, &std).forward(&mut g, z).unwrap();
    assert_eq!(g.value(back).data(), g.value(x).data());
}
