mod common;

use common::{fd_check, random_grid, rel_err};
use dynca::autodiff::{adam_step, normalize_gradients, AdamState, RuleVars, Tape, Var};
use dynca::grid::{Grid, Kernel3x3, PaddingMode};
use dynca::model::{make_seed, DyncaConfig, Engine, NcaState, PerceptionKernels, RngKey, Steering, UpdateRule};
use dynca::scalar::Scalar;
use proptest::prelude::*;

#[test]
fn sum_gradient_is_all_ones() {
    let mut t = Tape::<f64>::new();
    let w = t.leaf(random_grid(3, 4, 2, 1, -1.0, 1.0));
    let loss = t.sum(w);
    let g = t.backward(loss).unwrap();
    assert!(g.wrt(&t, w).data().iter().all(|&x| x == 1.0));
}

#[test]
fn dead_relu_has_zero_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Grid::filled(2, 2, 1, 0.7));
    let n = t.neg(x);
    let r = t.relu(n);
    let loss = t.sum(r);
    let g = t.backward(loss).unwrap();
    assert!(g.wrt(&t, x).data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut t = Tape::<f32>::new();
    let x = t.leaf(Grid::zeros(2, 2, 1));
    assert!(t.backward(x).is_err());
}

#[test]
fn leaves_off_the_path_get_zeros() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Grid::filled(2, 3, 1, 1.0));
    let b = t.leaf(Grid::filled(4, 1, 2, 1.0));
    let loss = t.mean(a);
    let g = t.backward(loss).unwrap();
    assert!(g.get(b).is_none());
    let gb = g.wrt(&t, b);
    assert_eq!(gb.shape(), (4, 1, 2));
    assert!(gb.data().iter().all(|&x| x == 0.0));
}

fn six_op_graph<T: Scalar>(t: &mut Tape<T>, v: &[Var]) -> Var {
    let k = Kernel3x3::new([0.1, -0.2, 0.3, 0.05, 0.4, -0.1, 0.2, 0.1, -0.3].map(T::lit));
    let c = t.conv(v[0], &k, PaddingMode::Replicate);
    let m = t.mul(c, v[1]).unwrap();
    let s = t.add_scalar(m, T::lit(0.3));
    let r = t.resize(s, 4, 12);
    let q = t.square(r);
    t.mean(q)
}

#[test]
fn random_six_op_graph_f32_matches_finite_differences() {
    let x = random_grid(8, 6, 3, 3, -1.0, 1.0);
    let y = random_grid(8, 6, 3, 4, -1.0, 1.0);
    let mut t = Tape::<f32>::new();
    let vars = [t.leaf(x.cast()), t.leaf(y.cast())];
    let loss = six_op_graph(&mut t, &vars);
    let grads = t.backward(loss).unwrap();
    let eval = |a: &Grid<f64>, b: &Grid<f64>| {
        let mut t = Tape::<f64>::new();
        let vars = [t.leaf(a.clone()), t.leaf(b.clone())];
        let out = six_op_graph(&mut t, &vars);
        t.scalar(out)
    };
    let eps = 1e-3;
    let mut worst = 0.0f64;
    for (k, base) in [&x, &y].into_iter().enumerate() {
        let g = grads.wrt(&t, vars[k]);
        for i in 0..base.len() {
            let mut p = base.clone();
            p.data_mut()[i] += eps;
            let mut m = base.clone();
            m.data_mut()[i] -= eps;
            let numeric = if k == 0 {
                (eval(&p, &y) - eval(&m, &y)) / (2.0 * eps)
            } else {
                (eval(&x, &p) - eval(&x, &m)) / (2.0 * eps)
            };
            worst = worst.max(rel_err(g.data()[i] as f64, numeric, 1e-3));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn conv_and_resize_gradients() {
    let x = random_grid(8, 8, 2, 5, -1.0, 1.0);
    let w = random_grid(8, 8, 2, 6, -1.0, 1.0);
    for pad in [PaddingMode::Zero, PaddingMode::Replicate, PaddingMode::Circular] {
        let err = fd_check(
            &[x.clone(), w.clone()],
            |t, v| {
                let c = t.conv(v[0], &Kernel3x3::sobel_x(), pad);
                let c = t.conv(c, &Kernel3x3::laplacian(), pad);
                let m = t.mul(c, v[1]).unwrap();
                t.sum(m)
            },
            1e-6,
            64,
            1,
        );
        assert!(err < 1e-6, "{pad:?}: {err}");
    }
    for (oh, ow) in [(4, 4), (16, 12), (5, 11)] {
        let wt = random_grid(oh, ow, 2, 7, -1.0, 1.0);
        let err = fd_check(
            &[x.clone(), wt],
            |t, v| {
                let r = t.resize(v[0], oh, ow);
                let m = t.mul(r, v[1]).unwrap();
                t.sum(m)
            },
            1e-6,
            64,
            2,
        );
        assert!(err < 1e-6, "{oh}x{ow}: {err}");
    }
}

#[test]
fn elementwise_gradients() {
    let a = random_grid(4, 5, 2, 8, 0.2, 2.0);
    let b = random_grid(4, 5, 2, 9, -2.0, 2.0);
    let err = fd_check(
        &[a, b],
        |t, v| {
            let d = t.div(v[1], v[0]).unwrap();
            let s = t.sqrt(v[0]);
            let ab = t.abs(d);
            let mn = t.min_const(ab, 0.8);
            let sc = t.scale(mn, -1.7);
            let p = t.sub(sc, s).unwrap();
            let q = t.mul(p, v[1]).unwrap();
            t.mean(q)
        },
        1e-7,
        100,
        3,
    );
    assert!(err < 1e-5, "{err}");
}

#[test]
fn dense_patches_gather_and_channel_ops() {
    let x = random_grid(6, 5, 3, 10, -1.0, 1.0);
    let w = random_grid(27, 4, 1, 11, -1.0, 1.0);
    let b = random_grid(1, 4, 1, 12, -1.0, 1.0);
    let rows = [0usize, 3, 3, 29, 17, 8];
    let err = fd_check(
        &[x, w, b],
        |t, v| {
            let p = t.patches3x3(v[0], PaddingMode::Zero);
            let d = t.dense(p, v[1], Some(v[2])).unwrap();
            let d = t.relu(d);
            let lo = t.slice_channels(d, 1, 2).unwrap();
            let hi = t.slice_channels(d, 0, 1).unwrap();
            let cat = t.concat_channels(&[lo, hi, lo]).unwrap();
            let g = t.gather_rows(cat, &rows).unwrap();
            let f = t.flatten_rows(cat);
            let sq = t.square(f);
            let a = t.sum(sq);
            let sq = t.square(g);
            let bsum = t.sum(sq);
            t.add(a, bsum).unwrap()
        },
        1e-6,
        80,
        4,
    );
    assert!(err < 1e-5, "{err}");
}

fn tiny_cfg(scales: Vec<usize>, rate: f64) -> DyncaConfig {
    DyncaConfig {
        channels: 4,
        hidden: 8,
        scales,
        update_rate: rate,
        ..DyncaConfig::small()
    }
}

#[test]
fn perception_gradients_for_every_steering() {
    let steerings = [
        Steering::None,
        Steering::Global(0.7),
        Steering::PerCell(random_grid(16, 16, 1, 13, -3.0, 3.0)),
    ];
    for scales in [vec![1], vec![1, 2, 4]] {
        let cfg = tiny_cfg(scales.clone(), 1.0);
        let k = PerceptionKernels::<f64>::default();
        let s = random_grid(16, 16, 4, 14, -1.0, 1.0);
        let wt = random_grid(16, 16, cfg.in_dim(), 15, -1.0, 1.0);
        for steer in &steerings {
            let err = fd_check(
                &[s.clone(), wt.clone()],
                |t, v| {
                    let z = t.perceive(v[0], &cfg, &k, steer).unwrap();
                    let m = t.mul(z, v[1]).unwrap();
                    t.sum(m)
                },
                1e-6,
                60,
                5,
            );
            assert!(err < 1e-5, "{scales:?} steering {}: {err}", matches!(steer, Steering::PerCell(_)));
        }
    }
}

#[test]
fn masked_mlp_gradients_hold_the_mask_fixed() {
    let cfg = tiny_cfg(vec![1], 0.5);
    let rule = UpdateRule::<f64>::random(&cfg, 2, 0.5);
    let z = random_grid(8, 8, cfg.in_dim(), 16, -1.0, 1.0);
    let wt = random_grid(8, 8, 4, 17, -1.0, 1.0);
    let rng = RngKey::new(4);
    let err = fd_check(
        &[z, rule.w1.clone(), rule.b1.clone(), rule.w2.clone(), wt],
        |t, v| {
            let d = t.masked_mlp(v[0], v[1], v[2], v[3], &rng, 7, 0.5).unwrap();
            let m = t.mul(d, v[4]).unwrap();
            t.sum(m)
        },
        1e-6,
        60,
        6,
    );
    assert!(err < 1e-5, "{err}");
}

#[test]
fn tape_step_matches_engine() {
    let angles = random_grid(16, 16, 1, 21, -3.0, 3.0).cast::<f32>();
    let pyramid = DyncaConfig {
        scales: vec![1, 2, 4],
        ..DyncaConfig::large()
    };
    for cfg in [DyncaConfig::small(), pyramid] {
        for steer in [Steering::Global(0.3), Steering::PerCell(angles.clone())] {
            let rule = UpdateRule::<f32>::random(&cfg, 5, 0.2);
            let engine = Engine::new(cfg.clone(), rule.clone()).unwrap();
            let rng = RngKey::new(8);
            let mut state = NcaState {
                grid: random_grid(16, 16, cfg.channels, 18, -1.0, 1.0).cast::<f32>(),
                step: 11,
            };
            let mut t = Tape::new();
            let rv = RuleVars::leaves(&mut t, &rule);
            let mut s = t.constant(state.grid.clone());
            for i in 0..3 {
                s = t.nca_step(s, rv, &cfg, &engine.kernels, &steer, &rng, 11 + i).unwrap();
                engine.step_in_place(&mut state, &rng, &steer).unwrap();
            }
            assert_eq!(t.value(s), &state.grid, "{} channels", cfg.channels);
        }
    }
}

#[test]
fn rollout_weight_gradients_match_finite_differences() {
    let cfg = tiny_cfg(vec![1], 0.5);
    let rule = UpdateRule::<f64>::random(&cfg, 3, 0.3);
    let seed = make_seed::<f64>(&cfg, 8, 8).unwrap();
    let s0 = random_grid(8, 8, 4, 19, -0.5, 0.5);
    let k = PerceptionKernels::<f64>::default();
    let rng = RngKey::new(2);
    let err = fd_check(
        &[rule.w1.clone(), rule.b1.clone(), rule.w2.clone()],
        |t, v| {
            let rv = RuleVars { w1: v[0], b1: v[1], w2: v[2] };
            let mut s = t.constant(s0.clone());
            for step in 0..6 {
                s = t.nca_step(s, rv, &cfg, &k, &Steering::None, &rng, step).unwrap();
            }
            let rgb = t.rgb(s).unwrap();
            let sq = t.square(rgb);
            t.mean(sq)
        },
        1e-6,
        50,
        7,
    );
    assert!(err < 1e-4, "{err}");
    assert_eq!(seed.grid.shape(), (8, 8, 4));
}

#[test]
fn normalize_examples() {
    let mut g = vec![
        Grid::from_vec(1, 2, 1, vec![3.0f64, 4.0]).unwrap(),
        Grid::zeros(2, 2, 1),
        random_grid(3, 3, 2, 20, -5.0, 5.0),
    ];
    normalize_gradients(&mut g);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-12 && (g[0].data()[1] - 0.8).abs() < 1e-12);
    assert!(g[1].data().iter().all(|&x| x == 0.0));
    let norm = g[2].data().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
}

/// Textbook Adam on a single scalar.
fn scalar_adam(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, t: i32, lr: f64) {
    *m = 0.9 * *m + 0.1 * g;
    *v = 0.999 * *v + 0.001 * g * g;
    let mh = *m / (1.0 - 0.9f64.powi(t));
    let vh = *v / (1.0 - 0.999f64.powi(t));
    *p -= lr * mh / (vh.sqrt() + 1e-8);
}

#[test]
fn adam_matches_scalar_reference() {
    let mut p = random_grid(3, 4, 1, 21, -1.0, 1.0);
    let mut refp = p.data().to_vec();
    let (mut rm, mut rv) = (vec![0.0; 12], vec![0.0; 12]);
    let mut st = AdamState::new(&[&p], 0.01);
    for step in 1..=10 {
        let g = random_grid(3, 4, 1, 100 + step as u64, -1.0, 1.0);
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut st).unwrap();
        for i in 0..12 {
            scalar_adam(&mut refp[i], &mut rm[i], &mut rv[i], g.data()[i], step, 0.01);
        }
    }
    for (a, b) in p.data().iter().zip(&refp) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn adam_single_step_and_zero_gradient() {
    let mut p = Grid::filled(2, 2, 1, 0.5f64);
    let mut st = AdamState::new(&[&p], 0.001);
    adam_step(&mut [&mut p], &[Grid::zeros(2, 2, 1)], &mut st).unwrap();
    assert!(p.data().iter().all(|&x| x == 0.5));

    let mut p = Grid::filled(2, 2, 1, 0.5f64);
    let mut st = AdamState::new(&[&p], 0.001);
    adam_step(&mut [&mut p], &[Grid::filled(2, 2, 1, 0.37)], &mut st).unwrap();
    for &x in p.data() {
        assert!(((0.5 - x) - 0.001).abs() < 1e-9);
    }
    assert!(adam_step(&mut [&mut p], &[Grid::zeros(3, 2, 1)], &mut st).is_err());
}

proptest! {
    #[test]
    fn normalize_is_idempotent(vals in prop::collection::vec(-10.0f64..10.0, 1..40), other in prop::collection::vec(-1.0f64..1.0, 1..10)) {
        let mut g = vec![
            Grid::from_vec(1, vals.len(), 1, vals).unwrap(),
            Grid::from_vec(other.len(), 1, 1, other).unwrap(),
        ];
        normalize_gradients(&mut g);
        let once = g.clone();
        normalize_gradients(&mut g);
        for (a, b) in once.iter().zip(&g) {
            prop_assert!(a.max_abs_diff(b) < 1e-6);
        }
    }

    #[test]
    fn gradient_shapes_match_values(h in 2usize..7, w in 2usize..7, c in 1usize..4, oh in 1usize..9, ow in 1usize..9) {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(random_grid(h, w, c, 1, -1.0, 1.0));
        let y = t.conv(x, &Kernel3x3::laplacian(), PaddingMode::Circular);
        let r = t.resize(y, oh, ow);
        let p = t.patches3x3(r, PaddingMode::Replicate);
        let s = t.square(p);
        let loss = t.sum(s);
        let g = t.backward(loss).unwrap();
        for v in [x, y, r, p] {
            prop_assert_eq!(g.wrt(&t, v).shape(), t.value(v).shape());
        }
    }
}
