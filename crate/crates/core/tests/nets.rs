use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pose2motion::autodiff::{Array, Graph};
use pose2motion::fixtures::{fixture_skeleton, FixtureSkeleton};
use pose2motion::nets::*;
use pose2motion::skeleton::Skeleton;

fn small_arch() -> ArchConfig {
    ArchConfig { kernel: 5, channels: 4, latent: 6, critic_hidden: 5, critic_channels: 3, ..Default::default() }
}

fn skeletons() -> (Skeleton, Skeleton) {
    (
        fixture_skeleton(FixtureSkeleton::Biped8).normalized().unwrap(),
        fixture_skeleton(FixtureSkeleton::Biped12).normalized().unwrap(),
    )
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn translators(seed: u64) -> (Translator, Translator, usize, usize) {
    let (s, t) = skeletons();
    let pair = SkeletonPair::new(&s, &t, 2, &BTreeMap::new()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = small_arch();
    let (ws, wt) = (6 * 9 + 3, 6 * 13 + 3);
    let g = Translator::new("g", &pair, &arch, Affine::identity(ws), Affine::identity(wt), &mut rng);
    let f = Translator::new("f", &pair.swapped(), &arch, Affine::identity(wt), Affine::identity(ws), &mut rng);
    (g, f, ws, wt)
}

#[test]
fn translator_shapes() {
    let (g, f, ws, wt) = translators(1);
    assert_eq!((g.in_width(), g.out_width()), (ws, wt));
    assert_eq!((f.in_width(), f.out_width()), (wt, ws));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[2, ws, 11]);
    let y = g.apply(&x).unwrap();
    assert_eq!(y.shape(), &[2, wt, 11]);
    assert!(y.all_finite());
    let back = f.apply(&y).unwrap();
    assert_eq!(back.shape(), &[2, ws, 11]);
    let bad = random(&mut rng, &[1, ws + 1, 11]);
    assert!(g.apply(&bad).is_err());
}

#[test]
fn translator_is_pure_and_seeded() {
    let (g, _, ws, _) = translators(3);
    let (g2, _, _, _) = translators(3);
    assert_eq!(g.params.fingerprint(), g2.params.fingerprint());
    assert_eq!(g.params.scalar_count(), g2.params.scalar_count());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[1, ws, 9]);
    let (a, b) = (g.apply(&x).unwrap(), g.apply(&x).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn zero_head_outputs_head_bias() {
    let (mut g, _, ws, wt) = translators(5);
    let w = g.head().weight;
    g.params.get_mut(w).data_mut().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = g.apply(&random(&mut rng, &[2, ws, 7])).unwrap();
    let bias = rest_bias(12);
    for b in 0..2 {
        for c in 0..wt {
            for t in 0..7 {
                assert_eq!(y.data()[(b * wt + c) * 7 + t], bias[c]);
            }
        }
    }
}

#[test]
fn translator_shift_equivariance() {
    let (g, _, ws, wt) = translators(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (len, s) = (40, 3);
    let x = random(&mut rng, &[1, ws, len]);
    let mut shifted = Vec::with_capacity(ws * (len - s));
    for c in 0..ws {
        shifted.extend_from_slice(&x.data()[c * len + s..(c + 1) * len]);
    }
    let xs = Array::new(vec![1, ws, len - s], shifted).unwrap();
    let (full, part) = (g.apply(&x).unwrap(), g.apply(&xs).unwrap());
    // Six temporal convolutions of radius two.
    let radius = 6 * 2;
    let mut compared = 0;
    for c in 0..wt {
        for t in radius..len - s - radius {
            let a = part.data()[c * (len - s) + t];
            let b = full.data()[c * len + t + s];
            assert!((a - b).abs() < 1e-12, "channel {c} frame {t}");
            compared += 1;
        }
        // Boundary frames do see the padding.
    }
    assert!(compared > 0);
    let edge = (0..wt).any(|c| (part.data()[c * (len - s)] - full.data()[c * len + s]).abs() > 1e-9);
    assert!(edge);
}

#[test]
fn gradient_reaches_through_both_translators() {
    let (g, f, ws, _) = translators(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut graph = Graph::new();
    let pg = g.params.bind(&mut graph, true);
    let pf = f.params.bind(&mut graph, true);
    let x = graph.variable(random(&mut rng, &[1, ws, 9]));
    let y = g.forward(&mut graph, &pg, x).unwrap();
    let z = f.forward(&mut graph, &pf, y).unwrap();
    let sq = graph.square(z);
    let loss = graph.sum(sq);
    graph.backward(loss).unwrap();
    assert!(graph.grad(x).unwrap().data().iter().any(|v| *v != 0.0));
    for (name, grad) in g.params.names().iter().zip(g.params.grads(&graph, &pg)) {
        assert!(grad.data().iter().any(|v| *v != 0.0), "{name} got no gradient");
    }
    for (name, grad) in f.params.names().iter().zip(f.params.grads(&graph, &pf)) {
        assert!(grad.data().iter().any(|v| *v != 0.0), "{name} got no gradient");
    }
}

#[test]
fn pose_critic_scores_and_locality() {
    let j = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = PoseCritic::new("dp", j, &small_arch(), &mut rng);
    let x = random(&mut rng, &[3, 6 * j]);
    let base = d.score(&x).unwrap();
    assert_eq!(base.shape(), &[3, j + 1]);
    for m in 0..j {
        let mut xp = x.clone();
        for n in 0..3 {
            xp.data_mut()[n * 6 * j + 6 * m + 2] += 0.7;
        }
        let s = d.score(&xp).unwrap();
        for n in 0..3 {
            for k in 0..j {
                let (a, b) = (s.data()[n * (j + 1) + k], base.data()[n * (j + 1) + k]);
                if k == m {
                    assert_ne!(a, b);
                } else {
                    assert_eq!(a, b);
                }
            }
            assert_ne!(s.data()[n * (j + 1) + j], base.data()[n * (j + 1) + j]);
        }
    }
}

#[test]
fn zero_pose_critic_returns_biases() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut d = PoseCritic::new("dp", 2, &small_arch(), &mut rng);
    let n = d.params.len();
    for i in 0..n {
        let is_bias = d.params.names()[i].ends_with("bias");
        let v = &mut d.params.values_mut()[i];
        if is_bias {
            let len = v.len();
            v.data_mut().copy_from_slice(&(0..len).map(|k| k as f64 + 1.0).collect::<Vec<_>>());
        } else {
            v.data_mut().fill(0.0);
        }
    }
    let s = d.score(&random(&mut rng, &[4, 12])).unwrap();
    for row in s.data().chunks(3) {
        assert_eq!(row, &[1.0, 2.0, 1.0]);
    }
}

#[test]
fn motion_critic_patch_geometry() {
    let (s, _) = skeletons();
    let topo = SkeletalTopology::augmented(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = MotionCritic::new("dm", &topo, &small_arch(), &mut rng);
    assert_eq!(d.receptive_field(), 13);
    for t in [8, 9, 13, 16, 30] {
        let y = d.score(&random(&mut rng, &[2, 57, t])).unwrap();
        assert_eq!(y.shape(), &[2, t.div_ceil(4)]);
        assert_eq!(d.patches(t), t.div_ceil(4));
    }
    let t = 40;
    let x = random(&mut rng, &[1, 57, t]);
    let base = d.score(&x).unwrap();
    let k = 5;
    // Patch k reads frames 4k - 6 ..= 4k + 6.
    let (lo, hi) = (4 * k - 6, 4 * k + 6);
    for frame in 0..t {
        let mut xp = x.clone();
        for c in 0..57 {
            xp.data_mut()[c * t + frame] += 1.0;
        }
        let changed = d.score(&xp).unwrap().data()[k] != base.data()[k];
        assert_eq!(changed, (lo..=hi).contains(&frame), "frame {frame}");
    }
    let mean = base.data().iter().sum::<f64>() / base.len() as f64;
    let mut g = Graph::new();
    let node = g.constant(base.clone());
    let m = g.mean(node);
    assert!((g.value(m).item() - mean).abs() < 1e-15);
}

#[test]
fn channel_stats_floor_constant_channels() {
    let m = pose2motion::motion::Motion::identity(2, 4, 30.0);
    let st = ChannelStats::of_motions(&[m]).unwrap();
    assert_eq!(st.len(), 21);
    assert!(st.std.iter().all(|&s| s == STD_FLOOR));
    assert_eq!(st.mean[0], 1.0);
    let a = st.standardize_tail(12, 21);
    assert_eq!(a.scale[0], 1.0);
    assert_eq!(a.scale[12], 1.0 / STD_FLOOR);
}

#[test]
fn arch_validation() {
    assert!(ArchConfig::default().validate().is_ok());
    assert!(ArchConfig { kernel: 4, ..Default::default() }.validate().is_err());
    assert!(ArchConfig { pool_levels: 0, ..Default::default() }.validate().is_err());
}
