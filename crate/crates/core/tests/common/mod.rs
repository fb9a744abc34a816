#![allow(dead_code)]

use dynca::autodiff::{Tape, Var};
use dynca::grid::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_grid(h: usize, w: usize, c: usize, seed: u64, lo: f64, hi: f64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(h, w, c, |_, _, _| rng.gen_range(lo..hi))
}

/// Relative error with an absolute floor for near-zero derivatives.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares reverse-mode gradients of `build` against central differences on
/// up to `probes` randomly chosen entries of every input; returns the worst
/// relative error.
pub fn fd_check(
    inputs: &[Grid<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
    eps: f64,
    probes: usize,
    seed: u64,
) -> f64 {
    let eval = |xs: &[Grid<f64>]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = build(&mut t, &vars);
        t.scalar(out)
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = build(&mut t, &vars);
    let grads = t.backward(out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let g = grads.wrt(&t, vars[k]);
        assert_eq!(g.shape(), x.shape());
        let n = x.len();
        let idx: Vec<usize> = if n <= probes {
            (0..n).collect()
        } else {
            (0..probes).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in idx {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            worst = worst.max(rel_err(g.data()[i], numeric, 1e-4));
        }
    }
    worst
}
